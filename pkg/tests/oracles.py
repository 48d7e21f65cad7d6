"""Reference computations that share no code with the package.

Each one reaches its answer by a different route than the solver it checks:
greedy filling plus a scalar search instead of alternating steps, bisection
on the water level instead of breakpoints, Lambert W instead of bisection.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import lambertw

LN2 = math.log(2.0)


def rate(e, t, a):
    if t <= 0:
        return 0.0
    return t * math.log1p(a * e / t) / LN2


def f_root(target):
    """x >= 1 with x ln x - x + 1 = target, via x = e^(1 + W((A-1)/e))."""
    if target == 0:
        return 1.0
    w = lambertw((target - 1.0) / math.e, 0).real
    return math.exp(1.0 + w)


def p3_closed_form(gamma):
    """(tau0, taus, sum rate) of the harvest-only network."""
    a = float(sum(gamma))
    x = f_root(a)
    d = a + x - 1.0
    tau0 = (x - 1.0) / d
    taus = [g / d for g in gamma]
    return tau0, taus, sum(t * math.log2(x) for t in taus)


def waterfill_bisect(tau, alpha, caps, e_max, iters=400):
    """Water-filling by bisection on the level nu."""
    act = [i for i in range(len(tau)) if tau[i] > 0 and caps[i] > 0 and alpha[i] > 0]
    out = [0.0] * len(tau)
    if e_max is None or e_max >= sum(caps[i] for i in act):
        for i in act:
            out[i] = caps[i]
        return out

    def alloc(nu):
        return {i: min(max(tau[i] * (nu - 1.0 / alpha[i]), 0.0), caps[i]) for i in act}

    lo = min(1.0 / alpha[i] for i in act)
    hi = max(1.0 / alpha[i] + caps[i] / tau[i] for i in act)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if sum(alloc(mid).values()) < e_max:
            lo = mid
        else:
            hi = mid
    for i, e in alloc(0.5 * (lo + hi)).items():
        out[i] = e
    return out


def _greedy_snr(alpha, caps, e_max):
    # With times chosen optimally, the network behaves like one user with
    # SNR sum alpha_i E_i, so energy should go to the best uplinks first.
    rem = math.inf if e_max is None else e_max
    s = 0.0
    for i in sorted(range(len(alpha)), key=lambda j: -alpha[j]):
        e = min(caps[i], rem)
        s += alpha[i] * e
        rem -= e
    return s


def p1_sum_optimum(alpha, budget, harvest, e_max):
    """Best sum rate of the generalized network, and the tau0 that attains it."""

    def value(x):
        caps = [b + h * x for b, h in zip(budget, harvest)]
        return rate(_greedy_snr(alpha, caps, e_max), 1.0 - x, 1.0)

    grid = np.linspace(0.0, 1.0, 2001)
    vals = [value(x) for x in grid]
    j = int(np.argmax(vals))
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    res = minimize_scalar(lambda x: -value(x), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-13})
    best_x, best = (res.x, -res.fun) if -res.fun > vals[j] else (grid[j], vals[j])
    return best, best_x


def p2_sum_optimum(alpha, budget, e_max):
    return rate(_greedy_snr(alpha, list(budget), e_max), 1.0, 1.0)


def random_pair(rng, *, p_b_dbm=30.0):
    """A random two-user physical setup in the ranges used by the oracle checks."""
    beta = rng.uniform(2.0, 4.0)
    d = rng.uniform(2.0, 15.0, 2)
    budgets = rng.uniform(0.0, 1e-6, 2)
    e_max = rng.uniform(1e-8, 5e-6)
    return beta, d, budgets, e_max, p_b_dbm
