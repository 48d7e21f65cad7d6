"""Sum-throughput solvers.

P1 (generalized network) and P2 (no harvesting) use alternating closed-form
steps: the optimal times for fixed energies, then water-filling energies for
fixed times. P3 (harvesting only, no energy cap) and P4 (harvesters plus
legacy users) have closed forms.

The plain time/energy alternation can stall for P1. Once the energy step
fills every user to its cap ``E^b_i + eta_i P_B h_i tau0``, the next time step
returns the same ``tau0`` and neither block can move, even when a longer
harvesting phase would pay off. :func:`solve_p1` therefore adds a third block
whenever progress slows down: a line search over ``tau0`` that keeps the
relative uplink time shares fixed and re-water-fills the energies at the new
caps. It is accepted only when it improves the objective, so the iterates
still ascend monotonically.
"""

from __future__ import annotations

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
)
from .scalar_solvers import solve_f_equals
from .units_metrics import LN2

# Relative per-iteration progress below which the harvest line search runs.
STALL_PROGRESS = 1e-4
MAX_SEARCH_PAUSE = 64
LINE_POINTS = 33
LINE_TOL = 1e-11
# Breakpoint ceiling: c/tau overflows for subnormal times, and inf - inf
# would turn the water level into NaN.
_BIG = np.finfo(float).max / 4


@dataclass(frozen=True)
class AlternatingConfig:
    max_iters: int = 10_000
    step_tol: float = 1e-9
    objective_tol: float = 1e-12

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.step_tol > 0 and self.objective_tol > 0):
            raise ValueError("tolerances must be > 0")


def time_step(instance: NetworkInstance, energy) -> tuple[float, np.ndarray]:
    """Best ``(tau0, tau)`` for fixed energies.

    ``tau0`` is the shortest harvesting phase that covers every user's energy
    deficit over its budget; the remaining time is split in proportion to
    ``alpha_i E_i``, which equalizes the users' SNRs.
    """
    e = np.asarray(energy, dtype=float)
    return _time_step(instance.alpha, instance.e_budget, instance.harvest, e)


def _time_step(alpha, budget, harvest, e):
    deficit = e - budget
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        need = np.where(
            harvest > 0, deficit / harvest, np.where(deficit > 0, np.inf, -np.inf)
        )
    tau0 = min(max(float(need.max()), 0.0), 1.0)
    weight = alpha * e
    total = float(weight.sum())
    rest = 1.0 - tau0
    if total > 0:
        tau = weight / total * rest
    else:
        tau = np.full(e.size, rest / e.size)
    return tau0, tau


def waterfill(tau, alpha, caps, e_max: float | None) -> np.ndarray:
    """Energies maximizing ``sum tau_i log2(1 + alpha_i E_i / tau_i)``.

    Subject to ``0 <= E_i <= caps_i`` and ``sum E_i <= e_max``. Users with no
    time, no cap or a dead uplink get nothing. The total allocated at water
    level ``nu`` is piecewise linear in ``nu``, so the level is found exactly
    by locating the right piece between breakpoints.
    """
    return _waterfill(
        np.asarray(tau, dtype=float),
        np.asarray(alpha, dtype=float),
        np.asarray(caps, dtype=float),
        e_max,
    )


def _waterfill(tau, alpha, caps, e_max):
    act = (tau > 0) & (caps > 0) & (alpha > 0)
    out = np.zeros(caps.shape)
    if act.all():
        t, a, c = tau, alpha, caps
    elif act.any():
        t, a, c = tau[act], alpha[act], caps[act]
    else:
        return out
    if e_max is None or e_max >= c.sum():
        out[act] = c
        return out
    floor = 1.0 / a
    with np.errstate(over="ignore"):
        pts = np.sort(np.minimum(np.concatenate([floor, floor + c / t]), _BIG))
        filled = np.minimum(np.maximum(t * (pts[:, None] - floor), 0.0), c).sum(axis=1)
    # Every cap is full at the top breakpoint; rounding in pts - floor can
    # leave the computed total a hair short of that.
    filled[-1] = c.sum()
    j = int(np.searchsorted(filled, e_max, side="left"))
    if j == 0:
        nu = pts[0]
    else:
        lo, hi = pts[j - 1], pts[j]
        s_lo, s_hi = filled[j - 1], filled[j]
        nu = lo + min((e_max - s_lo) / (s_hi - s_lo), 1.0) * (hi - lo)
    with np.errstate(over="ignore"):
        e = np.minimum(np.maximum(t * (nu - floor), 0.0), c)
    # When c/t is tiny next to 1/alpha the level carries only a few digits of
    # the fill; users strictly between floor and cap absorb the leftover.
    free = (e > 0) & (e < c)
    if free.any():
        e[free] += (e_max - math.fsum(e)) * t[free] / t[free].sum()
        e = np.minimum(np.maximum(e, 0.0), c)
    out[act] = e
    return out


def _waterfill_rows(t, alpha, caps, e_max):
    """Row-wise :func:`_waterfill` for ``(n, K)`` times and caps."""
    act = (t > 0) & (caps > 0) & (alpha > 0)
    c = np.where(act, caps, 0.0)
    if e_max is None:
        return c
    # Inactive users get zero-width pieces, so they never receive energy.
    tt = np.where(act, t, 1.0)
    floor = np.where(act, 1.0 / np.where(alpha > 0, alpha, 1.0), 0.0)
    with np.errstate(over="ignore"):
        pts = np.minimum(np.concatenate([floor, floor + c / tt], axis=1), _BIG)
        pts = np.sort(pts, axis=1)
        filled = np.minimum(
            np.maximum(tt[:, None, :] * (pts[:, :, None] - floor[:, None, :]), 0.0), c[:, None, :]
        ).sum(axis=2)
    total = c.sum(axis=1)
    filled[:, -1] = total
    rows = np.arange(t.shape[0])
    j = np.minimum((filled < e_max).sum(axis=1), pts.shape[1] - 1)
    jm = np.maximum(j - 1, 0)
    s_lo, s_hi = filled[rows, jm], filled[rows, j]
    lo, hi = pts[rows, jm], pts[rows, j]
    # Clipped, since a subnormal piece width can overflow the ratio.
    with np.errstate(over="ignore"):
        step = np.where(s_hi > s_lo, (e_max - s_lo) / np.where(s_hi > s_lo, s_hi - s_lo, 1.0), 0.0)
    step = np.clip(step, 0.0, 1.0)
    nu = np.where(j == 0, pts[:, 0], lo + step * (hi - lo))
    with np.errstate(over="ignore"):
        e = np.minimum(np.maximum(tt * (nu[:, None] - floor), 0.0), c)
    free = (e > 0) & (e < c)
    tf = np.where(free, tt, 0.0).sum(axis=1)
    share = np.where(free, tt, 0.0) / np.where(tf > 0, tf, 1.0)[:, None]
    e = np.minimum(np.maximum(e + (e_max - e.sum(axis=1))[:, None] * share, 0.0), c)
    return np.where((total <= e_max)[:, None], c, e)


def _harvest_line_search(shares, alpha, budget, harvest, e_max) -> float:
    """Best ``tau0`` along the line that keeps the uplink time shares fixed.

    Each point is scored after its water-filled energies get their own time
    split, so users left without energy give their time back. Each round
    keeps the two grid cells around the best grid point.
    """
    lo, hi = 0.0, 1.0
    best_x, best_v = 0.0, -math.inf
    while hi - lo > LINE_TOL:
        xs = np.linspace(lo, hi, LINE_POINTS)
        t = np.outer(1.0 - xs, shares)
        e = _waterfill_rows(t, alpha, budget + np.outer(xs, harvest), e_max)
        t = _retime_rows(t, alpha * e)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(t > 0, t * np.log1p(alpha * e / t), 0.0)
        v = r.sum(axis=1)
        j = int(np.argmax(v))
        if v[j] > best_v:
            best_x, best_v = float(xs[j]), float(v[j])
        lo, hi = xs[max(j - 1, 0)], xs[min(j + 1, LINE_POINTS - 1)]
    return best_x


def _retime_rows(t, weight):
    # time_step's split of each row's uplink time, rows with no weight kept
    w = weight.sum(axis=1)
    ok = w > 0
    share = weight / np.where(ok, w, 1.0)[:, None]
    return np.where(ok[:, None], share * t.sum(axis=1)[:, None], t)


def energy_step(instance: NetworkInstance, tau0: float, tau) -> np.ndarray:
    """Best energies for fixed times (water-filling under the per-user caps)."""
    return waterfill(tau, instance.alpha, instance.caps(tau0), instance.e_max)


def _objective(e, tau, alpha) -> float:
    # Lean version of units.rate for the inner loops; reports use rate().
    with np.errstate(divide="ignore", invalid="ignore"):
        r = tau * np.log1p(alpha * e / tau)
    return math.fsum(r[tau > 0]) / LN2


def _initial_energy(instance: NetworkInstance) -> np.ndarray:
    e = instance.e_budget + 0.5 * instance.harvest
    total = float(e.sum())
    if instance.e_max is not None and total > instance.e_max:
        e = e * (instance.e_max / total)
    return e


def _check_init(instance: NetworkInstance, e) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    if e.shape != (instance.k,):
        raise ValueError(f"init must have {instance.k} entries")
    if np.any(e < 0) or np.any(e > instance.caps(1.0)):
        raise ValueError("init energies must lie in [0, E^b_i + eta_i P_B h_i]")
    if instance.e_max is not None and e.sum() > instance.e_max * (1 + 1e-12):
        raise ValueError("init energies exceed e_max")
    return e


def _alternate(instance: NetworkInstance, cfg: AlternatingConfig, e, harvest_search: bool):
    alpha, budget, harvest, e_max = (
        instance.alpha,
        instance.e_budget,
        instance.harvest,
        instance.e_max,
    )

    def line(x, shares):
        t = shares * (1.0 - x)
        en = _waterfill(t, alpha, budget + harvest * x, e_max)
        return _retime_rows(t[None, :], (alpha * en)[None, :])[0], en

    trace: list[float] = []
    prev = None
    tau0, tau = 0.0, np.zeros_like(e)
    converged = False
    change = math.inf
    it = 0
    # A search that fails to help is retried after a growing pause.
    next_search, pause = 1, 1
    while it < cfg.max_iters:
        it += 1
        old = np.concatenate([[tau0], tau, e])
        kept = (tau0, tau, e)
        tau0, tau = _time_step(alpha, budget, harvest, e)
        e = _waterfill(tau, alpha, budget + harvest * tau0, e_max)
        cur = _objective(e, tau, alpha)
        # Only rounding can lower the objective here, e.g. tau0 rebuilt from
        # a deficit that cancels against a huge budget.
        dropped = prev is not None and cur < prev
        if dropped:
            tau0, tau, e = kept
            cur = prev
        slow = prev is None or cur - prev <= STALL_PROGRESS * abs(cur)
        improved = False
        if harvest_search and slow and tau0 < 1.0 and (dropped or it >= next_search):
            shares = tau / (1.0 - tau0)
            x = _harvest_line_search(shares, alpha, budget, harvest, e_max)
            t_x, e_x = line(x, shares)
            val = _objective(e_x, t_x, alpha)
            if val > cur:
                tau0, tau, e, cur = x, t_x, e_x, val
                pause, improved = 1, True
            else:
                pause = min(2 * pause, MAX_SEARCH_PAUSE)
            next_search = it + pause
        if dropped and not improved:
            trace.append(cur)
            converged, change = True, 0.0
            break
        trace.append(cur)
        new = np.concatenate([[tau0], tau, e])
        scale = np.maximum(np.abs(new), np.abs(old))
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(scale > 0, np.abs(new - old) / scale, 0.0)
        change = float(rel.max())
        if prev is not None:
            obj_change = abs(cur - prev)
            if obj_change <= cfg.objective_tol * max(abs(cur), 1e-300) or change < cfg.step_tol:
                converged = True
                change = min(change, obj_change / max(abs(cur), 1e-300))
                break
        prev = cur
    return Allocation(tau0, tau, e), trace, it, change, converged


def solve_p1(
    instance: NetworkInstance,
    cfg: AlternatingConfig | None = None,
    init=None,
) -> SolveReport:
    """Maximum sum throughput of the generalized network."""
    cfg = cfg or AlternatingConfig()
    if not np.any(instance.alpha * instance.caps(1.0) > 0):
        return _degenerate(instance, "p1")
    e0 = _initial_energy(instance) if init is None else _check_init(instance, init)
    alloc, trace, it, change, ok = _alternate(instance, cfg, e0, harvest_search=True)
    flags = () if ok else ("not_converged",)
    return report_from_allocation(
        instance,
        alloc,
        "p1",
        iterations=it,
        residual=change,
        objective_trace=trace,
        converged=ok,
        flags=flags,
    )


def solve_p2(instance: NetworkInstance, cfg: AlternatingConfig | None = None) -> SolveReport:
    """Maximum sum throughput without harvesting (``tau0 = 0``, caps ``E^b``)."""
    cfg = cfg or AlternatingConfig()
    legacy = _without_harvesting(instance)
    if not np.any(instance.alpha * instance.e_budget > 0):
        return _degenerate(instance, "p2")
    alloc, trace, it, change, ok = _alternate(
        legacy, cfg, _initial_energy(legacy), harvest_search=False
    )
    flags = () if ok else ("not_converged",)
    return report_from_allocation(
        instance,
        alloc,
        "p2",
        iterations=it,
        residual=change,
        objective_trace=trace,
        converged=ok,
        flags=flags,
    )


def _without_harvesting(instance: NetworkInstance) -> NetworkInstance:
    ch = type(instance.channels)(h=np.zeros(instance.k), g=instance.channels.g)
    return NetworkInstance(
        instance.users, ch, instance.p_b, instance.gamma_gap, instance.sigma2, instance.e_max
    )


def _degenerate(instance: NetworkInstance, problem: str) -> SolveReport:
    k = instance.k
    alloc = Allocation(0.0, np.full(k, 1.0 / k), np.zeros(k))
    return report_from_allocation(instance, alloc, problem, flags=("degenerate",))


def p3_allocation(gamma, harvest) -> tuple[Allocation, float]:
    """Closed-form harvest-only allocation and the root ``x*`` it uses."""
    gamma = np.asarray(gamma, dtype=float)
    harvest = np.asarray(harvest, dtype=float)
    a = float(gamma.sum())
    x = solve_f_equals(a).root
    denom = a + x - 1.0
    tau0 = (x - 1.0) / denom
    tau = gamma / denom
    return Allocation(tau0, tau, harvest * tau0), x


def solve_p3(instance: NetworkInstance) -> SolveReport:
    """Harvest-only network without a total energy cap."""
    if np.any(instance.e_budget > 0):
        raise ValueError("P3 requires zero energy budgets")
    if instance.e_max is not None:
        raise ValueError("P3 has no total energy constraint; pass e_max=None")
    if not instance.gamma.sum() > 0:
        return _degenerate(instance, "p3")
    alloc, _ = p3_allocation(instance.gamma, instance.harvest)
    return report_from_allocation(instance, alloc, "p3")


def p4_thresholds(inst: HeteroInstance) -> tuple[float, float]:
    """``e_max`` values where the harvesters stop getting time (upper) and
    where the legacy users start getting time (lower)."""
    x1 = _p4_root(inst)
    if x1 is None:
        return 0.0, 0.0
    return inst.a * (x1 - 1.0) / (inst.a1 + x1 - 1.0), inst.n * (x1 - 1.0) / inst.a2


def _p4_root(inst: HeteroInstance) -> float | None:
    """Root of ``f(x1) = A1 - (a/N) A2``, or None when the harvesters get nothing."""
    if inst.m == 0 or inst.n == 0:
        return None
    target = inst.a1 - inst.a / inst.n * inst.a2
    if target < 0:
        return None
    return solve_f_equals(target).root


def p4_allocation(inst: HeteroInstance) -> HeteroAllocation:
    m, n = inst.m, inst.n
    a, a1, a2, e_max = inst.a, inst.a1, inst.a2, inst.e_max
    gamma, theta = inst.gamma, inst.theta
    if m == 0 or a1 <= 0 or a <= 0:
        # Legacy users only (or harvesters that can never transmit).
        tau2 = theta / a2 if a2 > 0 else np.zeros(n)
        return HeteroAllocation(0.0, np.zeros(m), tau2, e_max / n if n else 0.0)
    x = solve_f_equals(a1).root
    if n == 0 or a2 <= 0:
        # No legacy users: the only coupling left is a tau0 <= e_max.
        tau0 = min((x - 1.0) / (a1 + x - 1.0), e_max / a)
        tau2 = np.zeros(n)
        return HeteroAllocation(tau0, gamma / a1 * (1.0 - tau0), tau2, 0.0)
    x1 = _p4_root(inst)
    if x1 is None:
        return HeteroAllocation(0.0, np.zeros(m), theta / a2, e_max / n)
    lower = a * (x1 - 1.0) / (a1 + x1 - 1.0)
    upper = n * (x1 - 1.0) / a2
    if e_max <= lower:
        tau0 = min((x - 1.0) / (a1 + x - 1.0), e_max / a)
        tau1 = np.maximum(gamma / (a1 + x - 1.0), gamma / a1 * (1.0 - e_max / a))
        return HeteroAllocation(tau0, tau1, np.zeros(n), 0.0)
    if e_max <= upper:
        denom = n * (x1 - 1.0 + a1) - a * a2
        num0 = n * (x1 - 1.0) - e_max * a2
        num_e = e_max * (x1 - 1.0 + a1) - a * (x1 - 1.0)
        tau0 = num0 / denom
        tau1 = gamma * num0 / ((x1 - 1.0) * denom)
        tau2 = theta * num_e / ((x1 - 1.0) * denom)
        return HeteroAllocation(tau0, tau1, tau2, num_e / denom)
    return HeteroAllocation(0.0, np.zeros(m), theta / a2, e_max / n)


def solve_p4(inst: HeteroInstance) -> SolveReport:
    """Closed-form sum-throughput allocation of the two-type network."""
    return report_from_allocation(inst, p4_allocation(inst), "p4")
