"""
Nonparametric DP Testers
Slope-sign Bernoulli test for a linear relationship and the Kruskal-Wallis
test on pair slopes for a mixture of two lines

Both testers reduce the data to slopes between disjoint random pairs of rows,
so changing one row changes at most one slope.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import stats

from dp_primitives import PrivacyBudget, RandomSource, gaussian_mech
from errors import InvalidConfig
from linear_model import Dataset, GroupedDataset
from monte_carlo import (Decision, MCConfig, Outcome, Reason, fail_to_reject,
                         mc_test)
from suffstat_testers import ThetaPair

logger = logging.getLogger(__name__)

SIGN_SENSITIVITY = 1.0  # one row moves the positive-slope count by at most 1
KW_SENSITIVITY = 8.0    # absolute-value Kruskal-Wallis statistic


# ---------------------------------------------------------------------------
# Pairing
# ---------------------------------------------------------------------------

@dataclass
class PairedSlopes:
    """Slopes between disjoint pairs of rows"""
    slopes: np.ndarray
    pairs: np.ndarray  # (m, 2) row indices; no index appears twice

    @property
    def pairs_used(self) -> int:
        return int(self.slopes.size)


def pair_within(x: np.ndarray, y: np.ndarray, perm: np.ndarray,
                rng: RandomSource) -> PairedSlopes:
    """
    Pair the j-th and (j + m/2)-th rows of perm and take slopes

    With an odd count the last row of perm is left out (perm is random, so this
    drops a uniformly chosen row). A pair with equal x gets one redraw of its
    second row from the left-out pool; if that also fails the pair is dropped.
    """
    perm = np.asarray(perm, dtype=int)
    pool: List[int] = []
    if perm.size % 2:
        pool.append(int(perm[-1]))
        perm = perm[:-1]
    half = perm.size // 2
    firsts, seconds = perm[:half], perm[half:]
    good = x[seconds] != x[firsts]
    pairs = [np.column_stack([firsts[good], seconds[good]])]

    for a, b in zip(firsts[~good], seconds[~good]):
        if pool:
            j = int(rng.integers(len(pool)))
            c = pool[j]
            if x[c] != x[a]:
                pool[j] = int(b)
                pairs.append(np.array([[a, c]]))
                continue
        logger.debug("dropping pair (%d, %d) with equal x", a, b)
        pool.extend([int(a), int(b)])

    pairs = np.concatenate(pairs).astype(int).reshape(-1, 2)
    slopes = (y[pairs[:, 1]] - y[pairs[:, 0]]) / (x[pairs[:, 1]] - x[pairs[:, 0]])
    return PairedSlopes(slopes=slopes, pairs=pairs)


# ---------------------------------------------------------------------------
# Bernoulli slope-sign tester
# ---------------------------------------------------------------------------

def sign_count(x: np.ndarray, y: np.ndarray, perm: np.ndarray,
               rng: RandomSource) -> int:
    """
    Number of positive slopes between rows perm[i] and perm[n_s + i]

    A pair with equal x contributes a fair coin flip.
    """
    n_s = len(perm) // 2
    a, b = perm[:n_s], perm[n_s:2 * n_s]
    dx = x[b] - x[a]
    dy = y[b] - y[a]
    tied = dx == 0
    positive = int(np.sum((np.sign(dx) * np.sign(dy) > 0) & ~tied))
    if np.any(tied):
        positive += int(np.sum(rng.integers(0, 2, size=int(np.sum(tied)))))
    return positive


def bernoulli_test(d: Dataset, budget: PrivacyBudget, alpha: float,
                   rng: RandomSource) -> Decision:
    """
    rho-zCDP slope-sign test for H0: slope = 0

    Reject iff the noisy count of positive pair slopes falls outside the
    (alpha/2, 1 - alpha/2) quantiles of N(n_s/2, n_s/4 + 1/(2 rho)).
    """
    if d.n < 2:
        raise InvalidConfig(f"Bernoulli test needs n >= 2, got {d.n}")
    if not 0 < alpha < 1:
        raise InvalidConfig(f"alpha must be in (0, 1), got {alpha}")
    n_s = d.n // 2
    s = sign_count(d.x, d.y, rng.permutation(d.n), rng)
    noisy = gaussian_mech(float(s), SIGN_SENSITIVITY, budget, rng)

    center = n_s / 2
    sd = np.sqrt(n_s / 4 + 1 / (2 * budget.rho))
    upper = float(stats.norm.ppf(1 - alpha / 2, loc=center, scale=sd))
    deviation = abs(noisy - center)
    half_width = upper - center
    if deviation > half_width:
        return Decision(Outcome.REJECT, Reason.CRITICAL_EXCEEDED, deviation, half_width)
    return fail_to_reject(Reason.CRITICAL_NOT_EXCEEDED, statistic=deviation,
                          threshold=half_width)


@dataclass
class BernoulliTester:
    budget: PrivacyBudget
    alpha: float = 0.05
    name: str = "bernoulli"

    def __call__(self, d: Dataset, rng: RandomSource) -> Decision:
        return bernoulli_test(d, self.budget, self.alpha, rng)


@dataclass
class NonPrivateBernoulliTester:
    """Exact two-sided Binomial(n_s, 1/2) test on the positive-slope count"""
    alpha: float = 0.05
    name: str = "bernoulli-np"

    def __call__(self, d: Dataset, rng: RandomSource) -> Decision:
        n_s = d.n // 2
        s = sign_count(d.x, d.y, rng.permutation(d.n), rng)
        p_value = float(stats.binomtest(s, n_s, 0.5).pvalue)
        # largest k with P[S <= k] <= alpha/2
        k_lo = int(stats.binom.ppf(self.alpha / 2, n_s, 0.5))
        if stats.binom.cdf(k_lo, n_s, 0.5) > self.alpha / 2:
            k_lo -= 1
        deviation = abs(s - n_s / 2)
        threshold = n_s / 2 - k_lo - 0.5
        if deviation > threshold:
            return Decision(Outcome.REJECT, Reason.CRITICAL_EXCEEDED, deviation,
                            threshold, p_value)
        return fail_to_reject(Reason.CRITICAL_NOT_EXCEEDED, statistic=deviation,
                              threshold=threshold, p_value=p_value)


# ---------------------------------------------------------------------------
# Kruskal-Wallis mixture tester
# ---------------------------------------------------------------------------

@dataclass
class KWStatistic:
    h: float                        # before noise
    m1: int                         # slopes from group 1
    m2: int                         # slopes from group 2
    h_noisy: Optional[float] = None


@dataclass(frozen=True)
class KWConfig:
    """Null simulation interval for the Kruskal-Wallis tester"""
    null_low: float = -5.0   # x, y drawn uniformly on [null_low, null_high]
    null_high: float = 5.0

    def __post_init__(self):
        if not self.null_low < self.null_high:
            raise InvalidConfig(f"empty null interval [{self.null_low}, {self.null_high}]")


@dataclass(frozen=True)
class KWNullModel:
    """Public group sizes and sampling interval; carries no private statistic"""
    n1: int
    n2: int
    low: float
    high: float


def _kw_h(ranks: np.ndarray, m1: int) -> np.ndarray:
    """h along the last axis, with ranks[..., :m1] belonging to group 1"""
    m = ranks.shape[-1]
    m2 = m - m1
    center = (m + 1) / 2
    r1 = np.mean(ranks[..., :m1], axis=-1)
    r2 = np.mean(ranks[..., m1:], axis=-1)
    return 4 * (m - 1) / m ** 2 * (m1 * np.abs(r1 - center) + m2 * np.abs(r2 - center))


def kw_statistic(s1, s2) -> KWStatistic:
    """Absolute-value Kruskal-Wallis statistic over the pooled slopes (midrank ties)"""
    s1 = np.asarray(s1, dtype=float).ravel()
    s2 = np.asarray(s2, dtype=float).ravel()
    if s1.size < 1 or s2.size < 1:
        raise InvalidConfig("each group needs at least one slope")
    ranks = stats.rankdata(np.concatenate([s1, s2]))
    return KWStatistic(h=float(_kw_h(ranks, s1.size)), m1=int(s1.size), m2=int(s2.size))


def dp_kw(g: GroupedDataset, budget: PrivacyBudget, rng: RandomSource) -> KWStatistic:
    """rho-zCDP Kruskal-Wallis statistic on within-group pair slopes"""
    p1 = pair_within(g.x, g.y, rng.permutation(g.n1), rng)
    p2 = pair_within(g.x, g.y, g.n1 + rng.permutation(g.n2), rng)
    if p1.pairs_used and p2.pairs_used:
        kw = kw_statistic(p1.slopes, p2.slopes)
    else:
        logger.debug("a group produced no usable pairs; h set to 0")
        kw = KWStatistic(h=0.0, m1=p1.pairs_used, m2=p2.pairs_used)
    kw.h_noisy = gaussian_mech(kw.h, KW_SENSITIVITY, budget, rng)
    return kw


def _random_pair_slopes(x: np.ndarray, y: np.ndarray,
                        rng: RandomSource) -> Optional[np.ndarray]:
    """Row-wise random disjoint pairing of a (batch, m) block; None on an equal-x pair"""
    order = np.argsort(rng.uniform(size=x.shape), axis=-1)
    half = x.shape[-1] // 2
    a, b = order[:, :half], order[:, half:2 * half]
    dx = np.take_along_axis(x, b, -1) - np.take_along_axis(x, a, -1)
    if np.any(dx == 0):
        return None
    dy = np.take_along_axis(y, b, -1) - np.take_along_axis(y, a, -1)
    return dy / dx


@dataclass
class KruskalWallisTester:
    """Private Kruskal-Wallis test for a mixture of two lines (H0: shared slope)"""
    budget: PrivacyBudget
    cfg: MCConfig = field(default_factory=MCConfig)
    kw: KWConfig = field(default_factory=KWConfig)
    name: str = "kw"

    def private_stats(self, g: GroupedDataset, rng: RandomSource) -> ThetaPair:
        if g.n1 < 2 or g.n2 < 2:
            raise InvalidConfig(f"KW test needs both groups >= 2, got {g.n1}, {g.n2}")
        null = KWNullModel(g.n1, g.n2, self.kw.null_low, self.kw.null_high)
        return ThetaPair(null, dp_kw(g, self.budget, rng))

    def statistic(self, theta1: KWStatistic) -> float:
        return float(theta1.h_noisy)

    def null_statistics(self, theta0: KWNullModel, k: int,
                        rng: RandomSource) -> np.ndarray:
        n = theta0.n1 + theta0.n2
        x = rng.uniform(theta0.low, theta0.high, size=(k, n))
        y = rng.uniform(theta0.low, theta0.high, size=(k, n))
        s1 = _random_pair_slopes(x[:, :theta0.n1], y[:, :theta0.n1], rng)
        s2 = _random_pair_slopes(x[:, theta0.n1:], y[:, theta0.n1:], rng)
        if s1 is None or s2 is None:
            return self._null_statistics_by_row(x, y, theta0.n1, rng)
        ranks = stats.rankdata(np.concatenate([s1, s2], axis=-1), axis=-1)
        h = _kw_h(ranks, s1.shape[-1])
        return gaussian_mech(h, KW_SENSITIVITY, self.budget, rng)

    def _null_statistics_by_row(self, x, y, n1, rng) -> np.ndarray:
        return np.array([dp_kw(GroupedDataset(xr, yr, n1), self.budget, rng).h_noisy
                         for xr, yr in zip(x, y)])

    def __call__(self, g: GroupedDataset, rng: RandomSource) -> Decision:
        return mc_test(g, self, self.cfg, rng)


def kw_test(g: GroupedDataset, budget: PrivacyBudget, cfg: MCConfig,
            rng: RandomSource, kw_cfg: KWConfig = KWConfig()) -> Decision:
    return KruskalWallisTester(budget, cfg, kw_cfg)(g, rng)


if __name__ == "__main__":
    print("=" * 60)
    print("NONPARAMETRIC TESTERS")
    print("=" * 60)

    rng = RandomSource(seed=11)
    n = 200
    x = rng.normal(0.0, 1.0, n)
    slopes = np.where(np.arange(n) < n // 2, -1.0, 1.0)
    g = GroupedDataset(x, slopes * x + rng.normal(0.0, 1.0, n), n // 2)
    decision = kw_test(g, PrivacyBudget(0.5), MCConfig(k=199), rng)
    print(f"\nKW, slopes -1 vs +1: {decision.outcome.value} "
          f"(h~={decision.statistic:.3f}, t_(r)={decision.threshold:.3f})")

    d = Dataset(x, 0.5 * x + rng.normal(0.0, 1.0, n))
    decision = bernoulli_test(d, PrivacyBudget(0.5), 0.05, rng)
    print(f"Bernoulli, slope 0.5:  {decision.outcome.value}")
