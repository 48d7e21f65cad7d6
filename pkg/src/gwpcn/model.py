"""Network instances, allocations, feasibility checks and solve reports.

Two instance types exist. :class:`NetworkInstance` is the generalized network
where every user has a fixed energy budget and a harvesting circuit.
:class:`HeteroInstance` is the two-type network: pure harvesters plus legacy
users that all draw the same energy from their supply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .units_metrics import DEFAULT_BANDWIDTH_HZ, RateValue, is_degenerate, jain_index, rate

TIME_TOL = 1e-9
ENERGY_TOL = 1e-12


def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class UserParams:
    eta: float = 0.5
    e_budget: float = 0.0
    d: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not self.e_budget >= 0.0:
            raise ValueError(f"e_budget must be >= 0, got {self.e_budget}")
        if not self.d > 0.0:
            raise ValueError(f"d must be > 0, got {self.d}")


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    h: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        h = _frozen_array(self.h, "h")
        g = _frozen_array(self.g, "g")
        if h.shape != g.shape:
            raise ValueError(f"h and g lengths differ: {h.size} vs {g.size}")
        if np.any(h < 0) or np.any(g < 0):
            raise ValueError("channel gains must be non-negative")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)

    def __len__(self) -> int:
        return self.h.size

    def __eq__(self, other):
        if not isinstance(other, ChannelRealization):
            return NotImplemented
        return np.array_equal(self.h, other.h) and np.array_equal(self.g, other.g)


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    """One slot of the generalized network.

    ``alpha``, ``gamma``, ``harvest`` (joules per unit of ``tau0``) and
    ``e_budget`` are cached as read-only arrays at construction.
    ``e_max=None`` means there is no total energy constraint.
    """

    users: tuple[UserParams, ...]
    channels: ChannelRealization
    p_b: float
    gamma_gap: float
    sigma2: float
    e_max: float | None = None
    alpha: np.ndarray = field(init=False, repr=False)
    gamma: np.ndarray = field(init=False, repr=False)
    harvest: np.ndarray = field(init=False, repr=False)
    e_budget: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        users = tuple(self.users)
        object.__setattr__(self, "users", users)
        if not users:
            raise ValueError("an instance needs at least one user")
        if len(users) != len(self.channels):
            raise ValueError(
                f"{len(users)} users but {len(self.channels)} channel gains"
            )
        if not self.p_b > 0:
            raise ValueError(f"p_b must be > 0, got {self.p_b}")
        if not self.gamma_gap >= 1:
            raise ValueError(f"gamma_gap must be >= 1, got {self.gamma_gap}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.e_max is not None and not self.e_max > 0:
            raise ValueError(f"e_max must be > 0 when given, got {self.e_max}")
        eta = np.array([u.eta for u in users])
        scale = self.gamma_gap * self.sigma2
        h, g = self.channels.h, self.channels.g
        object.__setattr__(self, "alpha", _frozen_array(g / scale, "alpha"))
        object.__setattr__(
            self, "gamma", _frozen_array(eta * h * g * self.p_b / scale, "gamma")
        )
        object.__setattr__(self, "harvest", _frozen_array(eta * self.p_b * h, "harvest"))
        object.__setattr__(
            self, "e_budget", _frozen_array([u.e_budget for u in users], "e_budget")
        )

    @property
    def k(self) -> int:
        return len(self.users)

    def caps(self, tau0: float) -> np.ndarray:
        """Per-user energy ceiling ``E^b_i + eta_i P_B h_i tau0``."""
        return self.e_budget + self.harvest * tau0

    def with_e_max(self, e_max: float | None) -> "NetworkInstance":
        return replace(self, e_max=e_max)

    def with_budgets(self, e_budget: Sequence[float]) -> "NetworkInstance":
        users = tuple(replace(u, e_budget=float(b)) for u, b in zip(self.users, e_budget))
        return replace(self, users=users)

    @classmethod
    def from_coefficients(
        cls,
        alpha: Sequence[float],
        harvest: Sequence[float],
        e_budget: Sequence[float] | None = None,
        e_max: float | None = None,
        eta: float = 0.5,
    ) -> "NetworkInstance":
        """Build an instance directly from ``alpha_i`` and ``eta_i P_B h_i``.

        Uses unit power, gap and noise so that the physical gains reproduce the
        requested coefficients exactly. Handy for hand-sized examples.
        """
        alpha = np.asarray(alpha, dtype=float)
        harvest = np.asarray(harvest, dtype=float)
        budgets = np.zeros_like(alpha) if e_budget is None else np.asarray(e_budget, float)
        users = tuple(UserParams(eta=eta, e_budget=float(b)) for b in budgets)
        ch = ChannelRealization(h=harvest / eta, g=alpha)
        return cls(users, ch, p_b=1.0, gamma_gap=1.0, sigma2=1.0, e_max=e_max)


@dataclass(frozen=True, eq=False)
class Allocation:
    tau0: float
    tau: np.ndarray
    energy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tau0", float(self.tau0))
        object.__setattr__(self, "tau", _frozen_array(self.tau, "tau"))
        object.__setattr__(self, "energy", _frozen_array(self.energy, "energy"))
        if self.tau.shape != self.energy.shape:
            raise ValueError("tau and energy lengths differ")

    @classmethod
    def zeros(cls, k: int) -> "Allocation":
        return cls(0.0, np.zeros(k), np.zeros(k))


@dataclass(frozen=True, eq=False)
class HeteroInstance:
    """Two-type network described by its effective coefficients.

    ``harvest[i]`` is ``eta_i P_B h_{1,i}`` for harvesting user i, ``gamma[i]``
    its harvest-to-SNR coefficient, and ``theta[j]`` the SNR-per-joule of
    legacy user j. Harvested energy counts against ``e_max`` together with the
    legacy users' shared draw: ``a tau0 + N Ebar <= e_max``.
    """

    harvest: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    e_max: float

    def __post_init__(self):
        harvest = _frozen_array(self.harvest, "harvest")
        gamma = _frozen_array(self.gamma, "gamma")
        theta = _frozen_array(self.theta, "theta")
        if harvest.shape != gamma.shape:
            raise ValueError("harvest and gamma lengths differ")
        if np.any(harvest < 0) or np.any(gamma < 0) or np.any(theta < 0):
            raise ValueError("coefficients must be non-negative")
        if harvest.size + theta.size == 0:
            raise ValueError("a hetero instance needs at least one user")
        if not self.e_max > 0:
            raise ValueError(f"e_max must be > 0, got {self.e_max}")
        object.__setattr__(self, "harvest", harvest)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "e_max", float(self.e_max))

    @property
    def m(self) -> int:
        return self.harvest.size

    @property
    def n(self) -> int:
        return self.theta.size

    @property
    def a(self) -> float:
        return float(self.harvest.sum())

    @property
    def a1(self) -> float:
        return float(self.gamma.sum())

    @property
    def a2(self) -> float:
        return float(self.theta.sum())

    @classmethod
    def from_network(cls, instance: NetworkInstance, legacy: Sequence[bool]) -> "HeteroInstance":
        """Split a generalized instance into harvesters and legacy users.

        Energy budgets are ignored: harvesters have none by definition and
        legacy users are limited only by the shared ``e_max``.
        """
        mask = np.asarray(legacy, dtype=bool)
        if mask.size != instance.k:
            raise ValueError(f"legacy mask has {mask.size} entries for {instance.k} users")
        if instance.e_max is None:
            raise ValueError("a hetero instance needs e_max")
        keep = ~mask
        return cls(
            harvest=instance.harvest[keep],
            gamma=instance.gamma[keep],
            theta=instance.alpha[mask],
            e_max=instance.e_max,
        )


@dataclass(frozen=True, eq=False)
class HeteroAllocation:
    tau0: float
    tau1: np.ndarray
    tau2: np.ndarray
    e_bar: float

    def __post_init__(self):
        object.__setattr__(self, "tau0", float(self.tau0))
        object.__setattr__(self, "tau1", _frozen_array(self.tau1, "tau1"))
        object.__setattr__(self, "tau2", _frozen_array(self.tau2, "tau2"))
        object.__setattr__(self, "e_bar", float(self.e_bar))


@dataclass(frozen=True)
class Violation:
    constraint: str
    margin: float

    def __str__(self) -> str:
        return f"{self.constraint} violated by {self.margin:.3e}"


def validate(instance, alloc) -> list[Violation]:
    """Every broken feasibility constraint with the amount it is exceeded by.

    Accepts either a :class:`NetworkInstance` with an :class:`Allocation` or a
    :class:`HeteroInstance` with a :class:`HeteroAllocation`.
    """
    if isinstance(instance, HeteroInstance):
        return _validate_hetero(instance, alloc)
    if alloc.tau.size != instance.k:
        raise ValueError(f"allocation has {alloc.tau.size} users, instance has {instance.k}")
    out: list[Violation] = []
    if alloc.tau0 < 0:
        out.append(Violation("tau0 >= 0", -alloc.tau0))
    for i, t in enumerate(alloc.tau):
        if t < 0:
            out.append(Violation(f"tau[{i}] >= 0", -t))
    slack = alloc.tau0 + float(alloc.tau.sum()) - 1.0
    if slack > TIME_TOL:
        out.append(Violation("slot budget", slack))
    caps = instance.caps(alloc.tau0)
    for i, (e, c) in enumerate(zip(alloc.energy, caps)):
        if e < -ENERGY_TOL:
            out.append(Violation(f"energy[{i}] >= 0", -e))
        if e - c > ENERGY_TOL:
            out.append(Violation(f"energy cap[{i}]", e - c))
    if instance.e_max is not None:
        over = float(alloc.energy.sum()) - instance.e_max
        if over > ENERGY_TOL:
            out.append(Violation("total energy", over))
    return out


def _validate_hetero(inst: HeteroInstance, alloc: HeteroAllocation) -> list[Violation]:
    if alloc.tau1.size != inst.m or alloc.tau2.size != inst.n:
        raise ValueError("allocation dimensions do not match the hetero instance")
    out: list[Violation] = []
    if alloc.tau0 < 0:
        out.append(Violation("tau0 >= 0", -alloc.tau0))
    for name, arr in (("tau1", alloc.tau1), ("tau2", alloc.tau2)):
        for i, t in enumerate(arr):
            if t < 0:
                out.append(Violation(f"{name}[{i}] >= 0", -t))
    slack = alloc.tau0 + float(alloc.tau1.sum() + alloc.tau2.sum()) - 1.0
    if slack > TIME_TOL:
        out.append(Violation("slot budget", slack))
    if alloc.e_bar < -ENERGY_TOL:
        out.append(Violation("e_bar >= 0", -alloc.e_bar))
    over = inst.a * alloc.tau0 + inst.n * alloc.e_bar - inst.e_max
    if over > ENERGY_TOL:
        out.append(Violation("total energy", over))
    return out


def harvested_energy(instance: NetworkInstance, user_index: int, tau0: float) -> float:
    if not 0 <= user_index < instance.k:
        raise IndexError(f"user index {user_index} out of range for {instance.k} users")
    if not 0.0 <= tau0 <= 1.0:
        raise ValueError(f"tau0 must lie in [0, 1], got {tau0}")
    return float(instance.harvest[user_index] * tau0)


class InvalidAllocationError(ValueError):
    def __init__(self, violations: list[Violation]):
        super().__init__("; ".join(map(str, violations)))
        self.violations = violations


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Outcome of one solve.

    Rates are spectral efficiencies (bits/s/Hz). ``flags`` carries
    non-fatal conditions such as ``"degenerate"`` (every rate is zero) or
    ``"not_converged"``.
    """

    problem: str
    allocation: Allocation | HeteroAllocation
    per_user_rate: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    objective_trace: tuple[float, ...] = ()
    converged: bool = True
    flags: tuple[str, ...] = ()
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ

    def __post_init__(self):
        object.__setattr__(self, "per_user_rate", _frozen_array(self.per_user_rate, "rates"))
        object.__setattr__(self, "objective_trace", tuple(map(float, self.objective_trace)))

    @property
    def sum_rate(self) -> float:
        return math.fsum(self.per_user_rate)

    @property
    def min_rate(self) -> float:
        return float(self.per_user_rate.min())

    @property
    def jfi(self) -> float:
        return jain_index(self.per_user_rate)

    @property
    def degenerate(self) -> bool:
        return "degenerate" in self.flags

    @property
    def objective(self) -> float:
        """The quantity the solver maximised: sum rate, or min rate for max-min."""
        return self.min_rate if self.problem.endswith("maxmin") else self.sum_rate

    def rate_values(self) -> list[RateValue]:
        return [RateValue(float(r), self.bandwidth_hz) for r in self.per_user_rate]


def user_rates(instance, alloc) -> np.ndarray:
    if isinstance(instance, HeteroInstance):
        # A harvester's SNR is gamma_i tau0 / tau_{1,i}, i.e. "energy" tau0.
        r1 = rate(np.full(instance.m, alloc.tau0), alloc.tau1, instance.gamma)
        r2 = rate(np.full(instance.n, alloc.e_bar), alloc.tau2, instance.theta)
        return np.concatenate([np.atleast_1d(r1), np.atleast_1d(r2)])
    return np.atleast_1d(rate(alloc.energy, alloc.tau, instance.alpha))


def report_from_allocation(
    instance,
    alloc,
    problem: str = "custom",
    *,
    iterations: int = 0,
    residual: float = 0.0,
    objective_trace: Sequence[float] = (),
    converged: bool = True,
    flags: Sequence[str] = (),
) -> SolveReport:
    violations = validate(instance, alloc)
    if violations:
        raise InvalidAllocationError(violations)
    rates = user_rates(instance, alloc)
    flags = tuple(flags)
    if is_degenerate(rates) and "degenerate" not in flags:
        flags += ("degenerate",)
    return SolveReport(
        problem=problem,
        allocation=alloc,
        per_user_rate=rates,
        iterations=iterations,
        residual=residual,
        objective_trace=tuple(objective_trace),
        converged=converged,
        flags=flags,
    )
