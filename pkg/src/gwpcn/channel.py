"""Seeded pathloss plus Rayleigh fading channel generation.

Every user of every realization gets its own generator, seeded from the
triple ``(seed, realization_index, user_index)``. A realization therefore
does not depend on how many others were drawn before it or in what order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ChannelRealization

PATHLOSS_CONST = 1e-3


@dataclass(frozen=True)
class ChannelModel:
    """Gain model ``pathloss_const * rho^2 * d^-beta`` with ``rho^2 ~ Exp(1)``.

    ``fading`` pins ``rho^2`` to a constant, which makes gains deterministic
    for tests and analytic examples.
    """

    beta: float = 2.0
    pathloss_const: float = PATHLOSS_CONST
    reciprocal: bool = True
    fading: float | None = None

    def __post_init__(self):
        if not 2.0 <= self.beta <= 6.0:
            raise ValueError(f"beta must lie in [2, 6], got {self.beta}")
        if not self.pathloss_const > 0:
            raise ValueError(f"pathloss_const must be > 0, got {self.pathloss_const}")
        if self.fading is not None and not self.fading >= 0:
            raise ValueError(f"fading must be >= 0, got {self.fading}")


def _exp_draws(seed: int, realization_index: int, user_index: int, n: int) -> np.ndarray:
    rng = np.random.default_rng([seed, realization_index, user_index])
    # 1 - U lies in (0, 1], so the log is always finite.
    return -np.log1p(-rng.random(n))


def sample(
    model: ChannelModel, distances: Sequence[float], seed: int, realization_index: int
) -> ChannelRealization:
    d = np.asarray(distances, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise ValueError("distances must be a non-empty 1-D sequence")
    if np.any(d <= 0):
        raise ValueError("distances must be > 0")
    if seed < 0 or realization_index < 0:
        raise ValueError("seed and realization_index must be non-negative")
    pl = model.pathloss_const * d ** (-model.beta)
    if model.fading is not None:
        g = pl * model.fading
        return ChannelRealization(h=g, g=g)
    draws = np.array(
        [_exp_draws(seed, realization_index, i, 2) for i in range(d.size)]
    )
    g = pl * draws[:, 0]
    h = g if model.reciprocal else pl * draws[:, 1]
    return ChannelRealization(h=h, g=g)


def batch(
    model: ChannelModel, distances: Sequence[float], seed: int, count: int
) -> list[ChannelRealization]:
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return [sample(model, distances, seed, r) for r in range(count)]
