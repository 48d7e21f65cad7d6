"""Max-min throughput solvers.

All variants bisect on the common rate ``t``. Checking whether ``t`` is
achievable is a convex problem in the harvesting time ``tau0``:

* every user needs at least ``tau_min_i(tau0)`` of uplink time to reach ``t``
  with its full energy cap, and the sum of those plus ``tau0`` must fit in the
  slot;
* with a total energy cap, the least energy that delivers ``t`` to everyone
  within the remaining time must not exceed ``e_max``.

Both quantities are convex in ``tau0`` and their derivatives have closed
forms, so ``tau0`` is located by bisection on the sign of the relevant
derivative. The kernels work on a batch of same-sized instances at once, which
is how the Monte-Carlo sweeps call them; single-instance calls are batches of
one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import (
    Allocation,
    HeteroAllocation,
    HeteroInstance,
    NetworkInstance,
    SolveReport,
    report_from_allocation,
)
from .scalar_solvers import _finv_m1, _fvals_m1, _tfr
from .units_metrics import LN2


@dataclass(frozen=True)
class MaxminConfig:
    """Tolerances of the nested searches.

    ``t_tol`` bounds the final bracket on the common rate relative to
    ``max(1, t)``; ``inner_tol`` is the relative accuracy of the water level in
    the minimum-energy subproblem; ``tau0_grid`` is the number of halvings
    spent locating ``tau0`` (64 halvings reach machine precision on [0, 1]).
    """

    t_tol: float = 1e-9
    inner_tol: float = 1e-12
    tau0_grid: int = 64

    def __post_init__(self):
        if not (self.t_tol > 0 and self.inner_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.tau0_grid < 1:
            raise ValueError("tau0_grid must be >= 1")


# -- minimum energy for a common rate ---------------------------------------


# Below this common rate the squared SNR terms underflow.
_TINY_RATE = 1e-100


def _min_energy(t, alpha, tmin, y_cap, budget_time, inner_tol):
    """Least total energy giving every user rate ``t`` within ``budget_time``.

    All arguments are batched: ``t`` and ``budget_time`` have shape (B,), the
    rest (B, K). Each user's time is at least ``tmin`` (its energy cap) and
    otherwise set where its marginal energy saving ``f(x)/alpha`` equals a
    common level ``nu``. SNRs are carried as ``y = x - 1`` so that tiny
    rates keep their digits. Returns ``(total, tau, energy, nu, y)``.

    The total time is convex and decreasing in ``log nu``, so Newton started
    from a level whose total is too long approaches the root from that side
    without overshooting.
    """
    b, k = alpha.shape
    tt = t[:, None] * LN2
    y_low = np.expm1(LN2 * t * k / budget_time)
    s = np.log((_fvals_m1(y_low)[:, None] / alpha).min(axis=1))
    for _ in range(100):
        level = alpha * np.exp(s)[:, None]
        yu = _finv_m1(level)
        capped = yu >= y_cap
        y = np.where(capped, y_cap, yu)
        lx = np.log1p(y)
        tau = tt / lx
        gap = tau.sum(axis=1) - budget_time
        slope = np.where(capped, 0.0, -tt * level / ((1.0 + y) * lx**3)).sum(axis=1)
        step = np.where(slope < 0, -gap / slope, 0.0)
        if not np.any(step > inner_tol * np.maximum(1.0, np.abs(s))):
            break
        s = s + np.maximum(step, 0.0)
    energy = tau / alpha * y
    return energy.sum(axis=1), tau, energy, np.exp(s), y


def min_energy_for_rate(instance: NetworkInstance, t: float, tau0: float, cfg: MaxminConfig | None = None):
    """Least total energy that gives every user rate ``t`` after harvesting ``tau0``.

    Returns ``(total, tau, energy)``, or None when ``t`` is out of reach
    (the users' minimum times do not fit or the total exceeds ``e_max``).
    """
    cfg = cfg or MaxminConfig()
    if t < 0:
        raise ValueError("t must be >= 0")
    if not 0.0 <= tau0 < 1.0:
        raise ValueError("tau0 must lie in [0, 1)")
    k = instance.k
    if t == 0:
        return 0.0, np.full(k, (1.0 - tau0) / k), np.zeros(k)
    caps = instance.caps(tau0)
    if t < _TINY_RATE:
        # Linear regime: E = t ln2 / alpha up to a relative t ln2 / tau term,
        # whatever the time split. f(1 + y) would underflow here.
        with np.errstate(divide="ignore"):
            energy = t * LN2 / instance.alpha
        if np.any(energy > caps):
            return None
        if instance.e_max is not None and energy.sum() > instance.e_max:
            return None
        return float(energy.sum()), np.full(k, (1.0 - tau0) / k), energy
    snr = instance.alpha * caps
    with np.errstate(all="ignore"):
        tmin = _tfr(snr, np.full(k, float(t)))
        if not np.all(np.isfinite(tmin)) or tau0 + tmin.sum() > 1.0:
            return None
        y_cap = snr / tmin
        total, tau, energy, _, _ = _min_energy(
            np.array([t]),
            instance.alpha[None, :],
            tmin[None, :],
            y_cap[None, :],
            np.array([1.0 - tau0]),
            cfg.inner_tol,
        )
    energy = np.minimum(energy[0], caps)
    if instance.e_max is not None and energy.sum() > instance.e_max:
        return None
    return float(energy.sum()), tau[0], energy


# -- generalized network kernel ---------------------------------------------


@dataclass
class _Batch:
    alpha: np.ndarray
    budget: np.ndarray
    harvest: np.ndarray
    e_max: np.ndarray
    has_cap: np.ndarray
    tau0_max: np.ndarray


def _feasible(t, bt: _Batch, cfg: MaxminConfig):
    with np.errstate(all="ignore"):
        return _feasible_kernel(t, bt, cfg)


def _feasible_kernel(t, bt: _Batch, cfg: MaxminConfig):
    """Vectorised achievability test of the common rate ``t``.

    Returns ``(ok, tau0, tau, energy)``; the allocation rows are meaningful
    where ``ok`` holds.
    """
    b, k = bt.alpha.shape
    lo = np.zeros(b)
    hi = bt.tau0_max.copy()
    ok = t <= 0
    dead = np.zeros(b, dtype=bool)
    out_tau0 = np.zeros(b)
    out_tau = np.full((b, k), 1.0 / k)
    out_e = np.zeros((b, k))
    pinned = hi <= 0
    for _ in range(cfg.tau0_grid):
        act = ~ok & ~dead
        if not act.any():
            break
        rows = np.flatnonzero(act)
        tau0 = 0.5 * (lo[rows] + hi[rows])
        ti = t[rows]
        alpha, harvest = bt.alpha[rows], bt.harvest[rows]
        caps = bt.budget[rows] + harvest * tau0[:, None]
        snr = alpha * caps
        tmin = _tfr(snr, ti[:, None])
        unreach = ~np.isfinite(tmin)
        hopeless = (unreach & (harvest <= 0)).any(axis=1)
        need_more = unreach.any(axis=1)
        tmin_f = np.where(unreach, 0.0, tmin)
        h = tau0 + tmin_f.sum(axis=1) - 1.0
        y_cap = np.where(unreach, np.inf, snr / np.where(tmin_f > 0, tmin_f, 1.0))
        y_cap = np.where(tmin_f > 0, y_cap, np.inf)
        fx = _fvals_m1(y_cap)
        dh = 1.0 - np.where(unreach | ~np.isfinite(fx), 0.0, harvest * alpha / fx).sum(axis=1)
        time_ok = ~need_more & (h <= 0)
        good = time_ok & ~bt.has_cap[rows]
        right = np.where(need_more, True, dh < 0)

        en = np.flatnonzero(time_ok & bt.has_cap[rows])
        if en.size:
            total, tau_e, e_e, nu, y = _min_energy(
                ti[en], alpha[en], tmin_f[en], y_cap[en], 1.0 - tau0[en], cfg.inner_tol
            )
            e_e = np.minimum(e_e, caps[en])
            within = total <= bt.e_max[rows[en]]
            kappa = np.maximum(alpha[en] * nu[:, None] / _fvals_m1(y) - 1.0, 0.0)
            capped = y >= y_cap[en]
            dg = nu - np.where(capped, kappa * harvest[en], 0.0).sum(axis=1)
            good[en] = within
            right[en] = dg < 0
            sel = rows[en[within]]
            out_tau0[sel] = tau0[en[within]]
            out_tau[sel] = tau_e[within]
            out_e[sel] = e_e[within]
        plain = rows[good & ~bt.has_cap[rows]]
        if plain.size:
            m = good & ~bt.has_cap[rows]
            out_tau0[plain] = tau0[m]
            out_tau[plain] = tmin_f[m]
            out_e[plain] = caps[m]
        ok[rows] |= good
        dead[rows] |= hopeless | (pinned[rows] & ~good)
        move = ~good
        lo[rows] = np.where(move & right, tau0, lo[rows])
        hi[rows] = np.where(move & ~right, tau0, hi[rows])
    return ok, out_tau0, out_tau, out_e


def _bisect_rate(t_hi, feasible, b, k, cfg: MaxminConfig, zero_alloc):
    lo = np.zeros(b)
    hi = np.asarray(t_hi, dtype=float).copy()
    best = zero_alloc
    iters = 0
    while True:
        act = hi - lo > cfg.t_tol * np.maximum(1.0, lo)
        if not act.any() or iters >= 200:
            break
        iters += 1
        t = np.where(act, 0.5 * (lo + hi), lo)
        ok, *alloc = feasible(t)
        upd = act & ok
        lo = np.where(upd, t, lo)
        hi = np.where(act & ~ok, t, hi)
        best = tuple(np.where(upd.reshape((-1,) + (1,) * (a.ndim - 1)), a, ba) for a, ba in zip(alloc, best))
    return lo, hi, best, iters


def _network_bound(bt: _Batch) -> np.ndarray:
    """Rate every user could reach alone with the whole slot: an upper bound on t*."""
    cap = bt.budget + bt.harvest * (bt.tau0_max[:, None] > 0)
    cap = np.where(bt.has_cap[:, None], np.minimum(cap, bt.e_max[:, None]), cap)
    return np.log2(1.0 + bt.alpha * cap).min(axis=1)


def _batch_from(instances: Sequence[NetworkInstance], pin_tau0: bool, budgets: bool) -> _Batch:
    ks = {inst.k for inst in instances}
    if len(ks) != 1:
        raise ValueError("all instances in a batch need the same number of users")
    alpha = np.array([inst.alpha for inst in instances])
    budget = np.array([inst.e_budget for inst in instances])
    if not budgets:
        budget = np.zeros_like(budget)
    harvest = np.array([inst.harvest for inst in instances])
    if pin_tau0:
        harvest = np.zeros_like(harvest)
    has_cap = np.array([inst.e_max is not None for inst in instances])
    e_max = np.array([inst.e_max if inst.e_max is not None else 0.0 for inst in instances])
    k = alpha.shape[1]
    tau0_max = np.full(len(instances), 0.0 if pin_tau0 else 1.0 - k * 1e-9)
    return _Batch(alpha, budget, harvest, e_max, has_cap, tau0_max)


def _solve_network_batch(instances, cfg, problem, pin_tau0, budgets):
    cfg = cfg or MaxminConfig()
    instances = list(instances)
    if not instances:
        return []
    bt = _batch_from(instances, pin_tau0, budgets)
    b, k = bt.alpha.shape
    t_hi = _network_bound(bt)
    zero = (np.zeros(b), np.full((b, k), 1.0 / k), np.zeros((b, k)))
    lo, hi, (tau0, tau, e), iters = _bisect_rate(
        t_hi, lambda t: _feasible(t, bt, cfg), b, k, cfg, zero
    )
    reports = []
    for i, inst in enumerate(instances):
        tau_i = tau[i]
        # Rounding in the closed forms can push the total a hair past 1.
        excess = tau0[i] + tau_i.sum() - 1.0
        if excess > 0:
            tau_i = tau_i * ((1.0 - tau0[i]) / tau_i.sum())
        caps = inst.caps(tau0[i]) if budgets else inst.harvest * tau0[i]
        e_i = np.minimum(e[i], caps)
        if inst.e_max is not None and e_i.sum() > inst.e_max:
            e_i = e_i * (inst.e_max / e_i.sum())
        flags = []
        if lo[i] == 0.0:
            flags.append("degenerate")
        if np.any(inst.alpha == 0):
            flags.append("zero_gain_user")
        reports.append(
            report_from_allocation(
                inst,
                Allocation(tau0[i], tau_i, e_i),
                problem,
                iterations=iters,
                residual=float(hi[i] - lo[i]),
                flags=flags,
            )
        )
    return reports


def solve_p1_maxmin_batch(
    instances: Sequence[NetworkInstance], cfg: MaxminConfig | None = None
) -> list[SolveReport]:
    """Max-min solve of many same-sized generalized instances at once."""
    return _solve_network_batch(instances, cfg, "p1_maxmin", pin_tau0=False, budgets=True)


def solve_p1_maxmin(instance: NetworkInstance, cfg: MaxminConfig | None = None) -> SolveReport:
    """Largest rate all users can reach simultaneously in the generalized network."""
    return solve_p1_maxmin_batch([instance], cfg)[0]


# -- two-type network kernel ------------------------------------------------


def _hetero_feasible(t, harvest, gamma, theta, e_max, cfg: MaxminConfig):
    with np.errstate(all="ignore"):
        return _hetero_kernel(t, harvest, gamma, theta, e_max, cfg)


def _hetero_kernel(t, harvest, gamma, theta, e_max, cfg: MaxminConfig):
    b, m = gamma.shape
    n = theta.shape[1]
    a = harvest.sum(axis=1)
    lo = np.zeros(b)
    hi = np.where(m > 0, np.minimum(1.0, np.where(a > 0, e_max / np.where(a > 0, a, 1.0), 0.0)), 0.0)
    ok = t <= 0
    dead = np.zeros(b, dtype=bool)
    out = (np.zeros(b), np.zeros((b, m)), np.zeros((b, n)), np.zeros(b))
    pinned = hi <= 0
    for _ in range(cfg.tau0_grid):
        act = ~ok & ~dead
        if not act.any():
            break
        rows = np.flatnonzero(act)
        tau0 = 0.5 * (lo[rows] + hi[rows])
        ti = t[rows][:, None]
        e_bar = (e_max[rows] - a[rows] * tau0) / n if n else np.zeros(rows.size)
        e_bar = np.maximum(e_bar, 0.0)
        c1 = gamma[rows] * tau0[:, None]
        c2 = theta[rows] * e_bar[:, None]
        t1 = _tfr(c1, ti)
        t2 = _tfr(c2, ti)
        inf1 = ~np.isfinite(t1)
        inf2 = ~np.isfinite(t2)
        more = inf1.any(axis=1)
        less = inf2.any(axis=1)
        hopeless = (more & less) | (inf1 & (gamma[rows] <= 0)).any(axis=1)
        if n:
            hopeless |= (inf2 & (theta[rows] <= 0)).any(axis=1)
        t1f = np.where(inf1, 0.0, t1)
        t2f = np.where(inf2, 0.0, t2)
        total = tau0 + t1f.sum(axis=1) + t2f.sum(axis=1)
        good = ~more & ~less & (total <= 1.0)
        y1 = c1 / np.where(t1f > 0, t1f, 1.0)
        y2 = c2 / np.where(t2f > 0, t2f, 1.0)
        d1 = np.where(t1f > 0, gamma[rows] / _fvals_m1(y1), 0.0).sum(axis=1)
        d2 = np.where(t2f > 0, theta[rows] / _fvals_m1(y2), 0.0).sum(axis=1)
        slope = 1.0 - d1 + (a[rows] / n if n else 0.0) * d2
        right = np.where(more, True, np.where(less, False, slope < 0))
        sel = rows[good]
        out[0][sel] = tau0[good]
        out[1][sel] = t1f[good]
        out[2][sel] = t2f[good]
        out[3][sel] = e_bar[good]
        ok[rows] |= good
        dead[rows] |= hopeless | (pinned[rows] & ~good)
        move = ~good
        lo[rows] = np.where(move & right, tau0, lo[rows])
        hi[rows] = np.where(move & ~right, tau0, hi[rows])
    return (ok,) + out


def solve_p4_maxmin_batch(
    instances: Sequence[HeteroInstance], cfg: MaxminConfig | None = None
) -> list[SolveReport]:
    cfg = cfg or MaxminConfig()
    instances = list(instances)
    if not instances:
        return []
    if len({(i.m, i.n) for i in instances}) != 1:
        raise ValueError("all instances in a batch need the same (M, N)")
    harvest = np.array([i.harvest for i in instances]).reshape(len(instances), -1)
    gamma = np.array([i.gamma for i in instances]).reshape(len(instances), -1)
    theta = np.array([i.theta for i in instances]).reshape(len(instances), -1)
    e_max = np.array([i.e_max for i in instances])
    b, m = gamma.shape
    n = theta.shape[1]
    a = harvest.sum(axis=1)
    bound = np.full(b, np.inf)
    if m:
        share = np.minimum(1.0, e_max / np.where(a > 0, a, np.inf))
        bound = np.minimum(bound, np.log2(1.0 + gamma * share[:, None]).min(axis=1))
    if n:
        bound = np.minimum(bound, np.log2(1.0 + theta * (e_max / n)[:, None]).min(axis=1))
    zero = (np.zeros(b), np.zeros((b, m)), np.zeros((b, n)), np.zeros(b))
    lo, hi, (tau0, tau1, tau2, e_bar), iters = _bisect_rate(
        bound, lambda t: _hetero_feasible(t, harvest, gamma, theta, e_max, cfg), b, m + n, cfg, zero
    )
    reports = []
    for i, inst in enumerate(instances):
        t1, t2 = tau1[i], tau2[i]
        s = tau0[i] + t1.sum() + t2.sum()
        if s > 1.0:
            f = (1.0 - tau0[i]) / (t1.sum() + t2.sum())
            t1, t2 = t1 * f, t2 * f
        eb = e_bar[i]
        if n and inst.a * tau0[i] + n * eb > inst.e_max:
            eb = max(0.0, (inst.e_max - inst.a * tau0[i]) / n)
        flags = ["degenerate"] if lo[i] == 0.0 else []
        reports.append(
            report_from_allocation(
                inst,
                HeteroAllocation(tau0[i], t1, t2, eb),
                "p4_maxmin",
                iterations=iters,
                residual=float(hi[i] - lo[i]),
                flags=flags,
            )
        )
    return reports


def solve_special_maxmin_batch(variant: str, instances, cfg: MaxminConfig | None = None):
    v = variant.lower()
    if v == "p2":
        return _solve_network_batch(instances, cfg, "p2_maxmin", pin_tau0=True, budgets=True)
    if v == "p3":
        for inst in instances:
            if inst.e_max is not None or np.any(inst.e_budget > 0):
                raise ValueError("P3 max-min needs zero budgets and no e_max")
        return _solve_network_batch(instances, cfg, "p3_maxmin", pin_tau0=False, budgets=False)
    if v == "p4":
        return solve_p4_maxmin_batch(instances, cfg)
    raise ValueError(f"unknown max-min variant {variant!r}; expected P2, P3 or P4")


def solve_special_maxmin(variant: str, instance, cfg: MaxminConfig | None = None) -> SolveReport:
    """Max-min solve of a special case: ``P2`` (no harvesting), ``P3``
    (harvesting only) or ``P4`` (two-type network)."""
    return solve_special_maxmin_batch(variant, [instance], cfg)[0]
