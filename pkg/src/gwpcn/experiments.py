"""Monte-Carlo sweeps over fading realizations.

A sweep varies one scenario parameter. At each value it draws the same
``realizations`` channel sets (common random numbers: realization ``r`` always
uses fading seeded by ``(seed, r, user)``), solves each requested problem on
each set and averages. Unless the scenario fixes ``e_max``, the total energy
cap is matched per value to the average energy the harvest-only network
collects: its sum-rate optimum for sum problems, its max-min optimum for
max-min problems.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import channel
from .maxmin_solvers import solve_p1_maxmin_batch, solve_special_maxmin_batch
from .model import HeteroInstance, NetworkInstance, SolveReport, UserParams
from .sum_solvers import p4_thresholds, solve_p1, solve_p2, solve_p3, solve_p4
from .units_metrics import db_to_linear, dbm_to_watts, noise_power

log = logging.getLogger(__name__)

SWEEP_PARAMS = ("beta", "p_b_dbm", "e_max", "e_budget", "d1", "mix")
SUM_PROBLEMS = ("p1", "p2", "p3", "p4")
MAXMIN_PROBLEMS = ("p1_maxmin", "p2_maxmin", "p3_maxmin", "p4_maxmin")
PROBLEMS = SUM_PROBLEMS + MAXMIN_PROBLEMS
DESK_REALIZATIONS = 200
FIG5_BUDGETS = (3e-7, 7e-7, 5e-6)
BETAS = (2.0, 2.5, 3.0, 3.5, 4.0)
P_B_SWEEP = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
FIGURES = ("fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig10", "fig9_mix")


@dataclass(frozen=True)
class Scenario:
    """Physical setup shared by every point of a sweep.

    ``legacy`` marks the users that act as supply-only nodes when the
    two-type network is solved; by default the last user is one.
    ``budget_series`` repeats the budget-dependent problems once per listed
    budget. ``hetero`` pins a deterministic two-type instance
    ``(a, theta_1, gamma_1)`` instead of drawing channels. ``fading`` pins
    the fading power, which makes every realization identical.
    """

    distances: tuple[float, ...] = (10.0, 5.0)
    etas: tuple[float, ...] | None = None
    e_budgets: tuple[float, ...] | None = None
    legacy: tuple[bool, ...] | None = None
    p_b_dbm: float = 30.0
    beta: float = 2.0
    e_max: float | None = None
    gamma_db: float = 9.8
    sigma2_dbm_hz: float = -160.0
    bandwidth_hz: float = 1e6
    pathloss_const: float = channel.PATHLOSS_CONST
    budget_series: tuple[float, ...] = ()
    hetero: tuple[float, float, float] | None = None
    fading: float | None = None

    def __post_init__(self):
        k = len(self.distances)
        if k == 0:
            raise ValueError("a scenario needs at least one user")
        for name in ("etas", "e_budgets", "legacy"):
            v = getattr(self, name)
            if v is not None and len(v) != k:
                raise ValueError(f"{name} has {len(v)} entries for {k} users")
        if self.e_max is not None and not self.e_max > 0:
            raise ValueError(f"e_max must be > 0, got {self.e_max}")

    @property
    def k(self) -> int:
        return len(self.distances)

    @property
    def legacy_mask(self) -> tuple[bool, ...]:
        if self.legacy is not None:
            return tuple(self.legacy)
        return (False,) * (self.k - 1) + (True,)

    def users(self, budgets: Sequence[float] | None = None) -> tuple[UserParams, ...]:
        etas = self.etas or (0.5,) * self.k
        if budgets is None:
            budgets = self.e_budgets or (0.0,) * self.k
        return tuple(
            UserParams(eta=e, e_budget=b, d=d) for e, b, d in zip(etas, budgets, self.distances)
        )

    def instances(self, seed: int, count: int) -> list[NetworkInstance]:
        model = channel.ChannelModel(
            beta=self.beta, pathloss_const=self.pathloss_const, fading=self.fading
        )
        users = self.users()
        p_b = dbm_to_watts(self.p_b_dbm)
        gap = db_to_linear(self.gamma_db)
        sigma2 = noise_power(self.sigma2_dbm_hz, self.bandwidth_hz)
        return [
            NetworkInstance(users, ch, p_b, gap, sigma2, self.e_max)
            for ch in channel.batch(model, self.distances, seed, count)
        ]

    def at(self, param: str, value) -> "Scenario":
        """This scenario with the swept parameter set to ``value``."""
        if param == "beta":
            return replace(self, beta=float(value))
        if param == "p_b_dbm":
            return replace(self, p_b_dbm=float(value))
        if param == "e_max":
            return replace(self, e_max=float(value))
        if param == "e_budget":
            return replace(self, e_budgets=(float(value),) * self.k, budget_series=())
        if param == "d1":
            return replace(self, distances=(float(value),) + tuple(self.distances[1:]))
        if param == "mix":
            n = int(value)
            if not 0 <= n <= self.k or n != value:
                raise ValueError(f"mix value must be an integer in [0, {self.k}], got {value}")
            return replace(self, legacy=(False,) * (self.k - n) + (True,) * n)
        raise ValueError(f"unknown sweep parameter {param!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str
    swept_param: str
    values: tuple
    realizations: int = DESK_REALIZATIONS
    seed: int = 42
    problems: tuple[str, ...] = SUM_PROBLEMS
    base: Scenario = field(default_factory=Scenario)

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "problems", tuple(p.lower() for p in self.problems))
        if not self.values:
            raise ValueError("values must be non-empty")
        if self.realizations < 1:
            raise ValueError(f"realizations must be >= 1, got {self.realizations}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.swept_param not in SWEEP_PARAMS:
            raise ValueError(f"swept_param must be one of {SWEEP_PARAMS}, got {self.swept_param!r}")
        bad = [p for p in self.problems if p not in PROBLEMS]
        if bad or not self.problems:
            raise ValueError(f"problems must be a non-empty subset of {PROBLEMS}, got {bad}")


@dataclass(frozen=True)
class SweepRow:
    value: float
    problem: str
    objective: float
    mean_sum_rate: float
    mean_min_rate: float
    mean_jfi: float
    realizations: int
    seed: int
    failures: int = 0


@dataclass(frozen=True)
class SweepResult:
    """Aggregated rows plus the matched energy caps, keyed by swept value."""

    swept_param: str
    rows: tuple[SweepRow, ...]
    matched_e_max: dict = field(default_factory=dict)

    def series(self, problem: str) -> list[SweepRow]:
        return [r for r in self.rows if r.problem == problem]


def matched_emax(instances_p3: Sequence[NetworkInstance], objective: str = "sum") -> float:
    """Average total energy the harvest-only network collects at its optimum.

    ``objective`` picks the sum-rate (``"sum"``) or max-min (``"maxmin"``)
    optimum as the reference.
    """
    instances_p3 = list(instances_p3)
    if not instances_p3:
        raise ValueError("matched_emax needs at least one instance")
    if objective == "sum":
        reports = [solve_p3(inst) for inst in instances_p3]
    elif objective == "maxmin":
        reports = solve_special_maxmin_batch("p3", instances_p3)
    else:
        raise ValueError(f"objective must be 'sum' or 'maxmin', got {objective!r}")
    totals = [
        float(inst.harvest.sum()) * rep.allocation.tau0
        for inst, rep in zip(instances_p3, reports)
    ]
    return math.fsum(totals) / len(totals)


def _harvest_only(inst: NetworkInstance) -> NetworkInstance:
    users = tuple(replace(u, e_budget=0.0) for u in inst.users)
    return replace(inst, users=users, e_max=None)


def _workers() -> int:
    raw = os.environ.get("WPCN_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"WPCN_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError(f"WPCN_THREADS must be >= 0, got {n}")
    return n or (os.cpu_count() or 1)


def _guarded(fn, arg):
    try:
        return fn(arg)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        log.warning("solver failed: %s", exc)
        return None


def _solve_each(fn, items, workers: int) -> list[SolveReport | None]:
    if workers <= 1 or len(items) < 2:
        return [_guarded(fn, x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda x: _guarded(fn, x), items))


def _solve_batch(batch_fn, items) -> list[SolveReport | None]:
    try:
        return list(batch_fn(items))
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        # Fall back to one at a time so a single bad realization is isolated.
        log.warning("batch solve failed (%s); retrying per realization", exc)
        return [_guarded(lambda x: batch_fn([x])[0], x) for x in items]


def problem_instance(problem: str, inst: NetworkInstance, legacy_mask: Sequence[bool]):
    """The instance ``problem`` is posed on, derived from a generalized one.

    Harvest-only problems drop budgets and the energy cap; two-type problems
    split users by ``legacy_mask``.
    """
    base = problem.removesuffix("_maxmin")
    if base == "p3":
        return _harvest_only(inst)
    if base == "p4":
        return HeteroInstance.from_network(inst, legacy_mask)
    if base in ("p1", "p2"):
        return inst
    raise ValueError(f"unknown problem {problem!r}")


_SINGLE = {"p1": solve_p1, "p2": solve_p2, "p3": solve_p3, "p4": solve_p4}


def _batch_solver(problem: str):
    if problem == "p1_maxmin":
        return solve_p1_maxmin_batch
    variant = problem.removesuffix("_maxmin")
    return lambda xs: solve_special_maxmin_batch(variant, xs)


def solve_prepared(problem: str, prepared) -> SolveReport:
    """Solve one instance already shaped by :func:`problem_instance`."""
    if problem in _SINGLE:
        return _SINGLE[problem](prepared)
    if problem in MAXMIN_PROBLEMS:
        return _batch_solver(problem)([prepared])[0]
    raise ValueError(f"unknown problem {problem!r}")


def solve_problem(problem: str, instances: Sequence[NetworkInstance], scen: Scenario, workers: int = 1):
    """Reports for ``problem`` on each instance; ``None`` marks a failure.

    ``instances`` must already carry the energy cap the problem should see.
    Max-min problems are solved as one vectorised batch.
    """
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}")
    mask = scen.legacy_mask
    prepared = []
    for inst in instances:
        try:
            prepared.append(problem_instance(problem, inst, mask))
        except ValueError as exc:
            log.warning("cannot pose %s: %s", problem, exc)
            prepared.append(None)
    live = [x for x in prepared if x is not None]
    if problem in _SINGLE:
        solved = iter(_solve_each(_SINGLE[problem], live, workers))
    else:
        solved = iter(_solve_batch(_batch_solver(problem), live))
    return [None if x is None else next(solved) for x in prepared]


def _aggregate(value, label: str, reports, seed: int) -> SweepRow:
    ok = [r for r in reports if r is not None]
    n = len(ok)
    failures = len(reports) - n

    def mean(xs):
        return math.fsum(xs) / n if n else 0.0

    return SweepRow(
        value=value,
        problem=label,
        objective=mean([r.objective for r in ok]),
        mean_sum_rate=mean([r.sum_rate for r in ok]),
        mean_min_rate=mean([r.min_rate for r in ok]),
        mean_jfi=mean([r.jfi for r in ok]),
        realizations=n,
        seed=seed,
        failures=failures,
    )


def _budget_dependent(problem: str) -> bool:
    return problem.removesuffix("_maxmin") in ("p1", "p2")


def _hetero_rows(spec: ExperimentSpec, scen: Scenario, value) -> list[SweepRow]:
    a, theta, gamma = scen.hetero
    inst = HeteroInstance(harvest=[a], gamma=[gamma], theta=[theta], e_max=scen.e_max)
    rows = []
    for problem in spec.problems:
        if problem in ("p4", "p4_maxmin"):
            reps = [_guarded(lambda x: solve_prepared(problem, x), inst)]
        else:
            raise ValueError(f"a pinned two-type scenario only supports p4 problems, not {problem!r}")
        rows.append(_aggregate(value, problem, reps, spec.seed))
    return rows


def run_sweep(spec: ExperimentSpec) -> SweepResult:
    """Solve every requested problem at every swept value and average.

    Deterministic for a fixed spec: channels depend only on the seed and the
    realization index, and averages are exactly rounded sums in realization
    order.
    """
    workers = _workers()
    rows: list[SweepRow] = []
    matched: dict = {}
    for value in spec.values:
        scen = spec.base.at(spec.swept_param, value)
        if scen.hetero is not None:
            rows.extend(_hetero_rows(spec, scen, value))
            continue
        base = scen.instances(spec.seed, spec.realizations)
        caps = {}
        if scen.e_max is None:
            p3 = [_harvest_only(i) for i in base]
            kinds = {"maxmin" if p.endswith("_maxmin") else "sum" for p in spec.problems}
            for kind in sorted(kinds):
                caps[kind] = matched_emax(p3, kind)
            matched[value] = dict(caps)
        series = scen.budget_series or (None,)
        for problem in spec.problems:
            kind = "maxmin" if problem.endswith("_maxmin") else "sum"
            cap = caps.get(kind, scen.e_max)
            if cap is not None and not cap > 0:
                # Nothing is harvested anywhere: every capped problem is idle.
                rows.append(_aggregate(value, problem, [None] * len(base), spec.seed))
                continue
            labelled = series if _budget_dependent(problem) else (None,)
            for budget in labelled:
                insts = base
                if budget is not None:
                    insts = [i.with_budgets([budget] * i.k) for i in insts]
                if cap is not None:
                    insts = [i.with_e_max(cap) for i in insts]
                label = problem if budget is None else f"{problem}@eb={budget:g}"
                reports = solve_problem(problem, insts, scen, workers)
                rows.append(_aggregate(value, label, reports, spec.seed))
    return SweepResult(spec.swept_param, tuple(rows), matched)


def fig3_thresholds_range(a: float, theta: float, gamma: float) -> tuple[float, ...]:
    """E_max values that straddle both regime changes of the two-user example."""
    probe = HeteroInstance(harvest=[a], gamma=[gamma], theta=[theta], e_max=1.0)
    lower, upper = p4_thresholds(probe)
    return tuple(np.round(np.linspace(0.25 * lower, 1.5 * upper, 24), 6))


def figure_preset(name: str, *, gain_ratio: float = 2.0) -> ExperimentSpec:
    """Sweep definitions of the published figures at desk scale.

    ``gain_ratio`` only affects ``fig3``: the harvester's coefficient is
    ``gamma_1 = gain_ratio * a * theta_1``.
    """
    if name == "fig3":
        a, theta = 5.0, 20.0
        gamma = gain_ratio * a * theta
        return ExperimentSpec(
            scenario=name,
            swept_param="e_max",
            values=fig3_thresholds_range(a, theta, gamma),
            realizations=1,
            problems=("p4",),
            base=Scenario(distances=(1.0, 1.0), hetero=(a, theta, gamma)),
        )
    if name == "fig4":
        return ExperimentSpec(
            scenario=name,
            swept_param="beta",
            values=BETAS,
            problems=("p1",),
            base=Scenario(
                distances=(5.0, 10.0), p_b_dbm=20.0, e_budgets=(1e-7, 1e-7), e_max=1e-6
            ),
        )
    two_user = Scenario(distances=(10.0, 5.0), e_budgets=(FIG5_BUDGETS[0],) * 2, budget_series=FIG5_BUDGETS)
    if name in ("fig5", "fig7"):
        problems = SUM_PROBLEMS if name == "fig5" else MAXMIN_PROBLEMS
        return ExperimentSpec(scenario=name, swept_param="beta", values=BETAS, problems=problems, base=two_user)
    if name in ("fig6", "fig8"):
        problems = SUM_PROBLEMS if name == "fig6" else MAXMIN_PROBLEMS
        return ExperimentSpec(
            scenario=name, swept_param="p_b_dbm", values=P_B_SWEEP, problems=problems, base=two_user
        )
    if name == "fig10":
        return ExperimentSpec(
            scenario=name,
            swept_param="d1",
            values=(5.0, 7.5, 10.0, 12.5, 15.0),
            problems=SUM_PROBLEMS,
            base=replace(two_user, p_b_dbm=20.0),
        )
    if name == "fig9_mix":
        return ExperimentSpec(
            scenario=name,
            swept_param="mix",
            values=tuple(range(7)),
            problems=("p4",),
            base=Scenario(distances=(10.0 / 6.0,) * 6, p_b_dbm=20.0),
        )
    raise ValueError(f"unknown figure preset {name!r}; expected one of {FIGURES}")
