"""
zCDP Building Blocks
Clipping, the Gaussian mechanism, budget splitting and seedable randomness
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from errors import InvalidBounds, InvalidConfig

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class PrivacyBudget:
    """Zero-concentrated DP budget"""
    rho: float  # zCDP parameter, > 0

    def __post_init__(self):
        if not np.isfinite(self.rho) or self.rho <= 0:
            raise InvalidConfig(f"rho must be positive and finite, got {self.rho}")


@dataclass(frozen=True)
class ClipBound:
    """Symmetric clipping half-width"""
    delta: float  # values are clipped to [-delta, delta]

    def __post_init__(self):
        if not np.isfinite(self.delta) or self.delta <= 0:
            raise InvalidConfig(f"delta must be positive and finite, got {self.delta}")


class RandomSource:
    """
    Seedable source of randomness

    Two sources with different (seed, stream) pairs are independent; the same
    pair always replays the same sequence. Children made by spawn() are
    independent of the parent and of each other.

    A single source must not be shared between concurrent workers.
    """

    def __init__(self, seed: int, stream: int = 0, path: Tuple[int, ...] = ()):
        self.seed = int(seed)
        self.stream = int(stream)
        self.path = tuple(int(p) for p in path)
        if self.seed < 0 or self.stream < 0:
            raise InvalidConfig(f"seed and stream must be non-negative, "
                                f"got {self.seed}, {self.stream}")
        seq = np.random.SeedSequence(entropy=self.seed,
                                     spawn_key=(self.stream,) + self.path)
        self.generator = np.random.default_rng(seq)
        self._spawned = 0

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, stream={self.stream}, path={self.path})"

    def spawn(self, k: int) -> List["RandomSource"]:
        """Create k independent child sources (deterministic given call order)"""
        start = self._spawned
        self._spawned += k
        return [RandomSource(self.seed, self.stream, self.path + (start + i,))
                for i in range(k)]

    def normal(self, loc: ArrayLike = 0.0, scale: ArrayLike = 1.0,
               size=None) -> ArrayLike:
        return self.generator.normal(loc, scale, size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> ArrayLike:
        return self.generator.uniform(low, high, size)

    def exponential(self, scale: float = 1.0, size=None) -> ArrayLike:
        return self.generator.exponential(scale, size)

    def lognormal(self, mean: float = 0.0, sigma: float = 1.0, size=None) -> ArrayLike:
        return self.generator.lognormal(mean, sigma, size)

    def integers(self, low: int, high: Optional[int] = None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, a, size=None, replace: bool = True):
        return self.generator.choice(a, size=size, replace=replace)


def clip(v: ArrayLike, lo: float, hi: float) -> ArrayLike:
    """Clamp v (scalar or array) to [lo, hi]"""
    if lo > hi:
        raise InvalidBounds(f"lower bound {lo} exceeds upper bound {hi}")
    if np.ndim(v) == 0:
        return float(min(hi, max(lo, v)))
    return np.clip(v, lo, hi)


def noise_variance(sensitivity: float, budget: PrivacyBudget) -> float:
    """Variance of Gaussian-mechanism noise: s^2 / (2 rho)"""
    return sensitivity ** 2 / (2.0 * budget.rho)


def gaussian_mech(value: ArrayLike, sensitivity: float, budget: PrivacyBudget,
                  rng: RandomSource) -> ArrayLike:
    """
    Release value under rho-zCDP by adding N(0, sensitivity^2 / (2 rho))

    Args:
        value: Statistic to release (a scalar, or an array of independent statistics)
        sensitivity: L2 sensitivity of the statistic, supplied by the caller
        budget: zCDP budget spent by this release
        rng: Source of the noise draw

    Returns:
        Noised value with the same shape as value
    """
    if sensitivity <= 0:
        raise InvalidConfig(f"sensitivity must be positive, got {sensitivity}")
    scale = np.sqrt(noise_variance(sensitivity, budget))
    if np.ndim(value) == 0:
        return float(value + rng.normal(0.0, scale))
    value = np.asarray(value, dtype=float)
    return value + rng.normal(0.0, scale, size=value.shape)


def split_budget(budget: PrivacyBudget, k: int) -> List[PrivacyBudget]:
    """Split a budget into k equal parts whose composition is the original budget"""
    if k < 1:
        raise InvalidConfig(f"k must be at least 1, got {k}")
    if k == 1:
        return [budget]
    part = PrivacyBudget(budget.rho / k)
    return [part] * k


if __name__ == "__main__":
    print("=" * 60)
    print("GAUSSIAN MECHANISM CHECK")
    print("=" * 60)

    rng = RandomSource(seed=1)
    budget = PrivacyBudget(0.5)
    draws = gaussian_mech(np.zeros(100_000), 1.0, budget, rng)
    print(f"\nrho={budget.rho}, sensitivity=1")
    print(f"  Expected variance:  {noise_variance(1.0, budget):.4f}")
    print(f"  Empirical variance: {np.var(draws):.4f}")

    parts = split_budget(PrivacyBudget(0.5), 5)
    print(f"\nSplit rho=0.5 into 5: {[p.rho for p in parts]}")
