"""Unit conversions, the uplink rate function and throughput/fairness metrics.

All rates are spectral efficiencies in bits/s/Hz. Multiply by the bandwidth
(see :func:`to_bits_per_second`) for absolute throughput.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LN2 = math.log(2.0)

# Below this slot fraction the rate is evaluated through the stable
# log-difference form; at exactly zero it is the continuous extension 0.
TINY_TIME = 1e-12

DEFAULT_BANDWIDTH_HZ = 1e6


@dataclass(frozen=True)
class RateValue:
    """A throughput in bits/s/Hz together with the bandwidth used to report it."""

    rate: float
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ

    def __post_init__(self):
        if not self.rate >= 0:
            raise ValueError(f"rate must be >= 0, got {self.rate}")

    @property
    def bits_per_second(self) -> float:
        return self.rate * self.bandwidth_hz

    @property
    def mbits_per_second(self) -> float:
        return self.bits_per_second / 1e6


def dbm_to_watts(p_dbm):
    """Convert power in dBm to watts."""
    if np.ndim(p_dbm):
        return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)
    return 10.0 ** ((float(p_dbm) - 30.0) / 10.0)


def watts_to_dbm(p_watts):
    if np.ndim(p_watts):
        return 10.0 * np.log10(p_watts) + 30.0
    return 10.0 * math.log10(p_watts) + 30.0


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def noise_power(psd_dbm_per_hz: float, bandwidth: float) -> float:
    """Noise power in watts for a PSD in dBm/Hz over ``bandwidth`` Hz."""
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return dbm_to_watts(psd_dbm_per_hz + 10.0 * math.log10(bandwidth))


def rate(energy, time, alpha):
    """Uplink throughput ``time * log2(1 + alpha * energy / time)``.

    Works on scalars or broadcastable arrays. ``time == 0`` gives exactly 0,
    the limit of the expression.
    """
    if np.ndim(energy) == 0 and np.ndim(time) == 0 and np.ndim(alpha) == 0:
        return _rate_scalar(float(energy), float(time), float(alpha))
    e = np.asarray(energy, dtype=float)
    t = np.asarray(time, dtype=float)
    a = np.asarray(alpha, dtype=float)
    if np.any(e < 0) or np.any(t < 0) or np.any(a < 0):
        raise ValueError("rate() needs non-negative energy, time and alpha")
    ae = a * e
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = t * np.log1p(ae / t) / LN2
        small = t * (np.log(t + ae) - np.log(t)) / LN2
    out = np.where(t < TINY_TIME, small, direct)
    return np.where((t == 0) | (ae == 0), 0.0, out)


def _rate_scalar(energy: float, time: float, alpha: float) -> float:
    if energy < 0 or time < 0 or alpha < 0:
        raise ValueError(
            f"rate() needs non-negative inputs, got E={energy}, tau={time}, alpha={alpha}"
        )
    ae = alpha * energy
    if time == 0.0 or ae == 0.0:
        return 0.0
    if time < TINY_TIME:
        return time * (math.log(time + ae) - math.log(time)) / LN2
    return time * math.log1p(ae / time) / LN2


def jain_index(rates) -> float:
    """Jain's fairness index (sum R)^2 / (K sum R^2).

    An all-zero vector is treated as perfectly fair and returns 1.0; callers
    that care flag it themselves (see :func:`is_degenerate`).
    """
    r = np.asarray(rates, dtype=float)
    if r.size == 0:
        raise ValueError("jain_index needs at least one rate")
    if np.any(r < 0):
        raise ValueError("rates must be non-negative")
    sq = float(np.sum(r * r))
    if sq == 0.0:
        return 1.0
    return float(np.sum(r)) ** 2 / (r.size * sq)


def is_degenerate(rates) -> bool:
    return not np.any(np.asarray(rates, dtype=float) > 0)


def to_bits_per_second(rate_bps_hz, bandwidth_hz: float):
    return rate_bps_hz * bandwidth_hz
