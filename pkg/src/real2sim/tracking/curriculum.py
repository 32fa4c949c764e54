"""Episode start sampling and per-motion load balancing."""
from __future__ import annotations

import numpy as np

LOAD_BALANCE_FLOOR = 0.05


def rsi_sample(length: int, rng: np.random.Generator, size=None):
    """Reference state initialization: a uniform start frame, never the last one.

    Args:
        length: clip length in frames, at least 1.
        rng: random generator.
        size: optional number of draws.
    """
    if length < 1:
        raise ValueError("clip length must be at least 1")
    hi = max(length - 1, 1)
    return rng.integers(0, hi, size=size)


def load_balance_weights(success_rates, floor: float = LOAD_BALANCE_FLOOR) -> np.ndarray:
    """Sampling distribution over motions favouring those that fail more often.

    ``w_i`` is proportional to ``1 - r_i + floor``.
    """
    r = np.asarray(success_rates, dtype=float)
    if r.size == 0:
        raise ValueError("no motions to balance")
    if np.any((r < 0) | (r > 1)) or not np.all(np.isfinite(r)):
        raise ValueError("success rates must lie in [0, 1]")
    if floor <= 0:
        raise ValueError("floor must be positive")
    w = 1.0 - r + floor
    return w / w.sum()


class MotionSampler:
    """Draw (motion, start frame) pairs with load balancing and RSI."""

    def __init__(self, lengths, rng: np.random.Generator, floor: float = LOAD_BALANCE_FLOOR):
        self.lengths = [int(n) for n in lengths]
        if not self.lengths:
            raise ValueError("no motions")
        self.rng = rng
        self.floor = floor
        self.attempts = np.zeros(len(self.lengths))
        self.successes = np.zeros(len(self.lengths))

    def record(self, motion: int, success: bool) -> None:
        self.attempts[motion] += 1
        self.successes[motion] += bool(success)

    @property
    def success_rates(self) -> np.ndarray:
        # motions never tried count as failing, so they get sampled
        return np.divide(self.successes, self.attempts, out=np.zeros_like(self.successes), where=self.attempts > 0)

    def sample(self) -> tuple[int, int]:
        p = load_balance_weights(self.success_rates, self.floor)
        m = int(self.rng.choice(len(p), p=p))
        return m, int(rsi_sample(self.lengths[m], self.rng))
