"""Brute-force grid oracle for small networks (K <= 3).

The search runs over a box of "coordinates" that always map to a feasible
allocation:

* time coordinates ``tau0, tau_1 .. tau_{K-1}``; the last user gets the rest
  of the slot, and points whose times exceed the slot are dropped;
* energy fractions ``u_i`` in [0, 1], with ``E_i = u_i * min(cap_i(tau0), E_max)``,
  then moved onto the surface where the total equals ``min(E_max, sum of caps)``.
  Two users need only one energy coordinate, ``E_1`` on an absolute scale,
  clipped to its feasible range on that surface. Every point past a clip
  lands exactly on the "other user at its cap" curve, which the optimum
  often follows as ``tau0`` moves.

For two-user max-min problems the split of the uplink time is not a grid
coordinate: at each point it is bisected until both rates agree. Otherwise
the min of the rates has a kink along that ridge, the grid error becomes
first order in the spacing, and refinement drifts off the optimum.

After each round the box shrinks around the incumbent. Nothing here reuses
the solvers' machinery, so the oracle can certify them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import (
    Allocation,
    HeteroAllocation,
    HeteroInstance,
    NetworkInstance,
    SolveReport,
    report_from_allocation,
    validate,
)

MAX_USERS = 3
PROBLEMS = ("p1", "p2", "p3", "p4", "p1_maxmin", "p2_maxmin", "p3_maxmin", "p4_maxmin")

# Trailing coordinates evaluated in one vectorised block; leading ones loop.
_BLOCK_DIMS = 4
_SPLIT_STEPS = 80


@dataclass(frozen=True)
class GridSpec:
    points_per_dim: int = 21
    refine_rounds: int = 6
    shrink_factor: float = 0.35

    def __post_init__(self):
        if self.points_per_dim < 3:
            raise ValueError(f"points_per_dim must be >= 3, got {self.points_per_dim}")
        if self.refine_rounds < 1:
            raise ValueError(f"refine_rounds must be >= 1, got {self.refine_rounds}")
        if not 0.0 < self.shrink_factor < 1.0:
            raise ValueError(f"shrink_factor must lie in (0, 1), got {self.shrink_factor}")


@dataclass(frozen=True)
class Certificate:
    passed: bool
    margin: float
    violations: tuple = ()


def _rates(e, tau, alpha):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = tau * np.log2(1.0 + alpha * e / tau)
    return np.where(tau > 0, r, 0.0)


class _Layout:
    """Maps a coordinate matrix (n, dims) to per-user rates and allocations."""

    def __init__(self, problem: str, instance):
        self.base = problem.removesuffix("_maxmin")
        self.maxmin = problem.endswith("_maxmin")
        self.inst = instance
        if self.base == "p4":
            if not isinstance(instance, HeteroInstance):
                raise TypeError("p4 needs a HeteroInstance")
            k = instance.m + instance.n
            self.k = k
            self.split = self.maxmin and k == 2
            tau0_hi = min(1.0, instance.e_max / instance.a) if instance.a > 0 else 0.0
            # tau0, then k-1 user times. Legacy users always draw everything
            # harvesting leaves under E_max, so their energy is not searched.
            free = 0 if self.split else k - 1
            self.bounds = [(0.0, tau0_hi)] + [(0.0, 1.0)] * free
            self.n_time = 1 + free
        else:
            if not isinstance(instance, NetworkInstance):
                raise TypeError(f"{problem} needs a NetworkInstance")
            k = instance.k
            self.k = k
            self.split = self.maxmin and k == 2
            pinned = self.base == "p2"
            self.n_time = (0 if pinned else 1) if self.split else (k - 1 if pinned else k)
            n_energy = 0 if self.base == "p3" else (1 if k == 2 else k)
            full = instance.e_budget[0] + instance.harvest[0]
            self.e1_scale = full if instance.e_max is None else min(full, instance.e_max)
            self.bounds = [(0.0, 1.0)] * (self.n_time + n_energy)
            if self.base == "p3" and (np.any(instance.e_budget > 0) or instance.e_max is not None):
                raise ValueError("p3 needs zero energy budgets and no e_max")
        if k > MAX_USERS:
            raise ValueError(f"the oracle handles at most {MAX_USERS} users, got {k}")

    @property
    def dims(self) -> int:
        return len(self.bounds)

    def _times(self, x):
        """(tau0, per-user times, keep-mask) from the time coordinates.

        In split mode the per-user times are placeholders until
        :meth:`_equalize` fills them in.
        """
        n = x.shape[0]
        if self.split:
            tau0 = np.zeros(n) if self.base == "p2" else x[:, 0]
            rest = 1.0 - tau0
            return tau0, np.stack([rest / 2, rest / 2], axis=1), np.ones(n, dtype=bool)
        if self.base == "p2":
            tau0 = np.zeros(n)
            head = x[:, : self.n_time]
        else:
            tau0 = x[:, 0]
            head = x[:, 1 : self.n_time]
        used = tau0 + head.sum(axis=1)
        keep = used <= 1.0
        last = np.maximum(1.0 - used, 0.0)[:, None]
        return tau0, np.hstack([head, last]), keep

    def _snr_energy(self, x, tau0):
        """Per-user ``alpha_i E_i`` (the rate numerator) at each point."""
        inst = self.inst
        if self.base == "p4":
            parts = [inst.gamma * tau0[:, None]]
            if inst.n:
                parts.append(inst.theta * self._e_bar(tau0)[:, None])
            return np.hstack(parts)
        return inst.alpha * self._energy(x, tau0)

    @staticmethod
    def _equalize(c, total):
        """Split ``total`` between two users so that their rates match."""
        lo, hi = np.zeros_like(total), total.copy()
        for _ in range(_SPLIT_STEPS):
            mid = 0.5 * (lo + hi)
            r = _rates(c, np.stack([mid, total - mid], axis=1), 1.0)
            short = r[:, 0] < r[:, 1]
            lo, hi = np.where(short, mid, lo), np.where(short, hi, mid)
        # hi favours user 0, lo user 1; keep whichever has the larger minimum.
        r_hi = _rates(c, np.stack([hi, total - hi], axis=1), 1.0).min(axis=1)
        r_lo = _rates(c, np.stack([lo, total - lo], axis=1), 1.0).min(axis=1)
        t1 = np.where(r_hi >= r_lo, hi, lo)
        return np.stack([t1, total - t1], axis=1)

    def _resolve(self, x):
        tau0, tau, keep = self._times(x)
        c = self._snr_energy(x, tau0)
        if self.split:
            tau = self._equalize(c, 1.0 - tau0)
        return tau0, tau, keep, c

    def evaluate(self, x):
        tau0, tau, keep, c = self._resolve(x)
        rates = _rates(c, tau, 1.0)
        obj = rates.min(axis=1) if self.maxmin else rates.sum(axis=1)
        return np.where(keep, obj, -np.inf)

    def _e_bar(self, tau0):
        return np.maximum(self.inst.e_max - self.inst.a * tau0, 0.0) / self.inst.n

    def _energy(self, x, tau0):
        inst = self.inst
        caps = inst.e_budget + inst.harvest * tau0[:, None]
        if self.base == "p3":
            return caps
        total_cap = caps.sum(axis=1)
        target = total_cap if inst.e_max is None else np.minimum(total_cap, inst.e_max)
        if self.k == 2:
            lo = np.maximum(target - caps[:, 1], 0.0)
            hi = np.minimum(caps[:, 0], target)
            e1 = np.clip(x[:, self.n_time] * self.e1_scale, lo, hi)
            return np.stack([e1, np.clip(target - e1, 0.0, caps[:, 1])], axis=1)
        scaled = caps if inst.e_max is None else np.minimum(caps, inst.e_max)
        e = x[:, self.n_time :] * scaled
        total = e.sum(axis=1)
        # Shrink onto the E_max surface, or top users up towards their caps
        # until the target is met. Rates never fall when energy rises, so
        # this discards no optimum and removes flat directions.
        shrink = np.where(total > target, target / np.where(total > 0, total, 1.0), 1.0)
        e = e * shrink[:, None]
        room = caps - e
        room_sum = room.sum(axis=1)
        extra = np.maximum(target - e.sum(axis=1), 0.0)
        fill = np.where(room_sum > 0, extra / np.where(room_sum > 0, room_sum, 1.0), 0.0)
        return np.minimum(e + room * fill[:, None], caps)

    def allocation(self, point):
        x = np.asarray(point, dtype=float)[None, :]
        tau0, tau, _, _ = self._resolve(x)
        if self.base == "p4":
            m = self.inst.m
            e_bar = float(self._e_bar(tau0)[0]) if self.inst.n else 0.0
            return HeteroAllocation(tau0[0], tau[0, :m], tau[0, m:], e_bar)
        return Allocation(tau0[0], tau[0], self._energy(x, tau0)[0])

    def zero_allocation(self):
        if self.base == "p4":
            return HeteroAllocation(0.0, np.zeros(self.inst.m), np.zeros(self.inst.n), 0.0)
        return Allocation.zeros(self.k)


def _search_box(layout: _Layout, lo, hi, points: int):
    """Best (objective, point) over the regular grid spanning [lo, hi]."""
    axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
    split = max(0, len(axes) - _BLOCK_DIMS)
    tail = np.stack(np.meshgrid(*axes[split:], indexing="ij"), axis=-1).reshape(-1, len(axes) - split)
    best_val, best_pt = -np.inf, None
    for head in itertools.product(*axes[:split]):
        x = np.hstack([np.broadcast_to(np.asarray(head, float), (tail.shape[0], split)), tail])
        vals = layout.evaluate(x)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_pt = float(vals[j]), x[j].copy()
    return best_val, best_pt


def grid_best(problem: str, instance, spec: GridSpec | None = None) -> SolveReport:
    """Best allocation found by iteratively refined grid search.

    ``residual`` on the returned report is the final grid spacing (largest
    over coordinates); ``objective_trace`` holds the incumbent per round.
    """
    spec = spec or GridSpec()
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")
    layout = _Layout(problem, instance)
    lower = np.array([b[0] for b in layout.bounds])
    upper = np.array([b[1] for b in layout.bounds])
    lo, hi = lower.copy(), upper.copy()
    best_val, best_pt = -np.inf, None
    trace = []
    spacing = float(np.max(hi - lo)) / (spec.points_per_dim - 1) if layout.dims else 0.0
    for _ in range(spec.refine_rounds):
        if layout.dims == 0:
            break
        val, pt = _search_box(layout, lo, hi, spec.points_per_dim)
        if val > best_val:
            best_val, best_pt = val, pt
        if best_pt is None:
            break
        trace.append(best_val)
        spacing = float(np.max(hi - lo)) / (spec.points_per_dim - 1)
        width = (hi - lo) * spec.shrink_factor
        lo = np.clip(best_pt - width / 2, lower, upper - width)
        hi = lo + width
    if layout.dims == 0:
        alloc = layout.allocation(np.zeros(0))
    elif best_pt is None:
        alloc = layout.zero_allocation()
    else:
        alloc = layout.allocation(best_pt)
    return report_from_allocation(
        instance,
        alloc,
        problem,
        iterations=len(trace),
        residual=spacing,
        objective_trace=trace,
    )


def certify(report: SolveReport, oracle_report: SolveReport, rel_tol: float, instance) -> Certificate:
    """Pass iff ``report`` is feasible and no worse than the oracle, up to ``rel_tol``.

    The margin is ``report.objective - oracle_report.objective``; it may be
    positive since the oracle only ever finds a lower bound on the optimum.
    """
    if report.problem != oracle_report.problem:
        raise ValueError(f"problem mismatch: {report.problem!r} vs {oracle_report.problem!r}")
    if report.per_user_rate.size != oracle_report.per_user_rate.size:
        raise ValueError("reports describe different numbers of users")
    if not rel_tol >= 0:
        raise ValueError(f"rel_tol must be >= 0, got {rel_tol}")
    violations = tuple(validate(instance, report.allocation))
    ref = oracle_report.objective
    margin = report.objective - ref
    ok = margin >= -rel_tol * max(1.0, abs(ref)) and not violations
    if not math.isfinite(margin):
        ok = False
    return Certificate(bool(ok), float(margin), violations)
