"""Bracketed scalar root finding.

Everything here is bisection on monotone scalar functions, plus the two
closed-form inverses (via Lambert W) that the batched max-min kernels call
in their innermost loops, where per-element bisection would be too slow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import lambertw

DEFAULT_TOL = 1e-12
MAX_ITERS = 200
MAX_DOUBLINGS = 200

# Below this distance from 1, x ln x - x + 1 is summed as its Taylor series
# in u = x - 1; the direct form loses most of its digits there.
_SERIES_EDGE = 0.05
# (-1)^n / (n (n-1)) for n = 2..13, highest order first for Horner; the
# truncation error is below 1e-17 relative at the edge.
_SERIES = tuple((-1.0) ** n / (n * (n - 1)) for n in range(13, 1, -1))


class DomainError(ValueError):
    pass


class BracketError(ValueError):
    pass


class EvaluationError(ArithmeticError):
    pass


class UnboundedRootError(RuntimeError):
    pass


@dataclass(frozen=True)
class Bracket:
    lo: float
    hi: float
    f_lo: float
    f_hi: float


@dataclass(frozen=True)
class RootResult:
    root: float
    residual: float
    iterations: int


def _series(u):
    acc = 0.0 * u
    for c in _SERIES:
        acc = acc * u + c
    return acc * u * u


def f_harvest(x: float) -> float:
    """``x ln x - x + 1``; summed as a series near 1 to avoid cancellation."""
    u = x - 1.0
    if abs(u) <= _SERIES_EDGE:
        return _series(u)
    return x * math.log(x) - u


def _checked(f: Callable[[float], float], x: float) -> float:
    y = f(x)
    if not math.isfinite(y):
        raise EvaluationError(f"non-finite function value {y!r} at x={x!r}")
    return y


def expand_bracket_upward(
    f: Callable[[float], float],
    target: float,
    lo: float = 1.0,
    hi: float = 2.0,
    max_doublings: int = MAX_DOUBLINGS,
) -> Bracket:
    """Double ``hi`` until ``f(hi) >= target`` for an increasing ``f``.

    Returns the degenerate bracket ``[lo, lo]`` when ``f(lo)`` already
    reaches the target.
    """
    f_lo = _checked(f, lo)
    if f_lo >= target:
        return Bracket(lo, lo, f_lo, f_lo)
    f_hi = _checked(f, hi)
    n = 0
    while f_hi < target:
        if n >= max_doublings:
            raise UnboundedRootError(
                f"f stayed below {target} after {max_doublings} doublings (hi={hi})"
            )
        hi *= 2.0
        f_hi = _checked(f, hi)
        n += 1
    return Bracket(lo, hi, f_lo, f_hi)


def bisect_monotone(
    f: Callable[[float], float],
    bracket: Bracket | tuple[float, float],
    tol: float = DEFAULT_TOL,
) -> RootResult:
    """Root of a monotone ``f`` inside ``bracket`` by plain bisection.

    Stops once ``|f(root)| <= tol`` or the bracket is narrower than
    ``tol * max(1, |root|)``.
    """
    if isinstance(bracket, Bracket):
        lo, hi, f_lo, f_hi = bracket.lo, bracket.hi, bracket.f_lo, bracket.f_hi
    else:
        lo, hi = map(float, bracket)
        f_lo, f_hi = _checked(f, lo), _checked(f, hi)
    if lo > hi:
        raise BracketError(f"empty bracket [{lo}, {hi}]")
    if f_lo == 0.0:
        return RootResult(lo, 0.0, 0)
    if f_hi == 0.0:
        return RootResult(hi, 0.0, 0)
    if (f_lo > 0) == (f_hi > 0):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f={f_lo}, {f_hi}")
    rising = f_hi > 0
    for it in range(1, MAX_ITERS + 1):
        mid = 0.5 * (lo + hi)
        f_mid = _checked(f, mid)
        if abs(f_mid) <= tol or (hi - lo) <= tol * max(1.0, abs(mid)) or mid in (lo, hi):
            return RootResult(mid, f_mid, it)
        if (f_mid > 0) == rising:
            hi = mid
        else:
            lo = mid
    mid = 0.5 * (lo + hi)
    return RootResult(mid, _checked(f, mid), MAX_ITERS)


def solve_f_equals(target: float, tol: float = DEFAULT_TOL) -> RootResult:
    """Unique ``x >= 1`` with ``x ln x - x + 1 = target``."""
    if not target >= 0.0:
        raise DomainError(f"target must be >= 0, got {target}")
    if target == 0.0:
        return RootResult(1.0, 0.0, 0)
    br = expand_bracket_upward(f_harvest, target)
    scale = max(1.0, target)
    lo, hi = br.lo, br.hi
    it = 0
    # Bisect down to adjacent floats: cheap (< 100 steps) and it makes the
    # root accurate in x, not just in the residual.
    while it < MAX_ITERS:
        it += 1
        mid = 0.5 * (lo + hi)
        r = f_harvest(mid) - target
        if r == 0.0 or (mid in (lo, hi) and abs(r) <= tol * scale):
            return RootResult(mid, r, it)
        if mid in (lo, hi):
            break
        if r > 0:
            hi = mid
        else:
            lo = mid
    mid = 0.5 * (lo + hi)
    return RootResult(mid, f_harvest(mid) - target, it)


# -- vectorised closed forms ------------------------------------------------


# The leading-underscore kernels skip validation and floating-point state
# handling; callers wrap hot loops in a single ``np.errstate``.


def _fvals(x):
    return _fvals_m1(x - 1.0)


def _fvals_m1(y):
    # f(1 + y), usable where 1 + y itself would round to 1
    return np.where(np.abs(y) <= _SERIES_EDGE, _series(y), (1.0 + y) * np.log1p(y) - y)


def f_values(x) -> np.ndarray:
    """Vectorised ``x ln x - x + 1``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return _fvals(np.asarray(x, dtype=float))


def _finv(a):
    return 1.0 + _finv_m1(a)


def _finv_m1(a):
    """``x - 1`` where ``f(x) = a``; keeps full relative accuracy as ``x -> 1``."""
    w = lambertw((a - 1.0) / math.e, 0).real
    y = np.where(np.abs(a - 1.0) < 1e-14, math.e - 1.0, (a - 1.0) / w - 1.0)
    s = np.sqrt(2.0 * a)
    y = np.maximum(np.where(a < 1e-10, s + s * s / 6.0 - s**3 / 72.0, y), 0.0)
    for _ in range(2):
        ly = np.log1p(y)
        y = np.where(y > 0, np.maximum(y - (_fvals_m1(y) - a) / ly, 0.0), y)
    return np.where(a == 0.0, 0.0, y)


def f_inverse(target) -> np.ndarray:
    """Vectorised inverse of ``x ln x - x + 1`` on ``[1, inf)``.

    ``x = (A - 1) / W0((A - 1)/e)``, polished with two Newton steps.
    ``inf`` maps to ``inf``.
    """
    a = np.asarray(target, dtype=float)
    if np.any(a < 0):
        raise DomainError("f_inverse target must be >= 0")
    finite = np.isfinite(a)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        x = _finv(np.where(finite, a, 1.0))
    return np.where(finite, x, np.inf)


_Q_SERIES = 0.05
_Q_TERMS = 16


def _q(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``q(y) = 1 - ln(1+y)/y`` and its derivative, cancellation-free near 0."""
    small = y < _Q_SERIES
    ys = np.where(small, y, 0.0)
    q_s = np.zeros_like(ys)
    dq_s = np.zeros_like(ys)
    p = np.ones_like(ys)
    for n in range(1, _Q_TERMS + 1):
        # q = sum (-1)^(n+1) y^n/(n+1);  q' = sum (-1)^(n+1) n y^(n-1)/(n+1)
        sign = 1.0 if n % 2 else -1.0
        dq_s += sign * n * p / (n + 1)
        p = p * ys
        q_s += sign * p / (n + 1)
    yl = np.where(small, 1.0, y)
    lg = np.log1p(yl)
    q_l = 1.0 - lg / yl
    dq_l = lg / (yl * yl) - 1.0 / (yl * (1.0 + yl))
    return np.where(small, q_s, q_l), np.where(small, dq_s, dq_l)


def time_for_rate(snr_energy, t) -> np.ndarray:
    """Smallest ``tau`` with ``tau * log2(1 + c / tau) = t`` where ``c = alpha * E``.

    The rate saturates at ``c / ln 2`` as ``tau`` grows, so targets at or above
    that give ``inf``. ``t == 0`` gives 0.

    With ``y = c / tau`` the equation reads ``1 - ln(1+y)/y = 1 - k`` where
    ``k = t ln 2 / c``. The start value comes from Lambert W, or from the series
    ``y ~ 2d + 8d^2/3`` (``d = 1 - k``) near saturation where W is unreliable;
    Newton steps on the cancellation-free form finish the job.
    """
    c = np.asarray(snr_energy, dtype=float)
    t = np.asarray(t, dtype=float)
    c, t = np.broadcast_arrays(c, t)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _tfr(c, t)


def _tfr(c, t):
    d = (c - t * math.log(2.0)) / c
    ok = (d > 0) & (c > 0) & (t > 0)
    dd = np.where(ok, d, 0.5)
    k = np.where(ok, t * math.log(2.0) / c, 0.5)
    far = dd > 1e-3
    w = lambertw(-k * np.exp(-k), -1).real
    y = np.where(far, -w / k - 1.0, 2.0 * dd + 8.0 * dd * dd / 3.0)
    y = np.maximum(y, 1e-300)
    for _ in range(4):
        # Away from saturation ln(1+y) - k y is well conditioned; near it
        # only the q form keeps its digits.
        g = np.log1p(y) - k * y
        dg = 1.0 / (1.0 + y) - k
        q, dq = _q(y)
        step = np.where(far, g / np.where(dg < 0, dg, -1.0), (q - dd) / dq)
        step = np.where(far & (dg >= 0), 0.0, step)
        y = np.maximum(y - step, 0.5 * y)
    tau = c / y
    out = np.where(ok, tau, np.inf)
    return np.where(t <= 0, 0.0, out)
