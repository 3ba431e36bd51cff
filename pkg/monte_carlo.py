"""
Monte Carlo DP Test Framework
Rank the private statistic among K statistics simulated from a privately fitted null

The simulated datasets go through the same DPStats release (with the full
budget rho) as the real data, so the simulated statistics carry the same
privacy noise as the observed one. Simulated runs touch no real data and
spend no real privacy budget.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol, Tuple

import numpy as np

from dp_primitives import ClipBound, PrivacyBudget, RandomSource
from errors import DegenerateStat, InvalidConfig
from linear_model import Dataset, GroupedDataset
from suffstat_testers import (NULL_SLOPE_POOLED, ThetaLinearAlt, ThetaLinearNull,
                              ThetaMixtureNull, ThetaPair, dp_stats_linear,
                              dp_stats_linear_batch, dp_stats_mixture, dp_stats_mixture_batch,
                              linear_batch_statistics, mixture_batch_statistics,
                              private_f_stat_linear, private_f_stat_mixture)

logger = logging.getLogger(__name__)

# Upper bound on batch * n cells per simulated block (memory cap)
_CHUNK_CELLS = 2_000_000
# Guards ceil() against (K+1)(1-alpha) landing a hair above an integer
_CEIL_SLACK = 1e-9


class Outcome(Enum):
    REJECT = "Reject"
    FAIL_TO_REJECT = "FailToReject"


class Reason(Enum):
    RANK_EXCEEDED = "RankExceeded"
    RANK_NOT_EXCEEDED = "RankNotExceeded"
    BOTTOM_THETA = "BottomTheta"
    DEGENERATE_STAT = "DegenerateStat"
    CI_EXCLUSION = "CIExclusion"
    CI_INCLUSION = "CIInclusion"
    CRITICAL_EXCEEDED = "CriticalExceeded"
    CRITICAL_NOT_EXCEEDED = "CriticalNotExceeded"


@dataclass(frozen=True)
class Decision:
    """Outcome of one hypothesis test"""
    outcome: Outcome
    reason: Reason
    statistic: Optional[float] = None
    threshold: Optional[float] = None
    p_value: Optional[float] = None  # rank-based, approximate
    interval: Optional[Tuple[float, float]] = None  # CI tester only

    @property
    def rejected(self) -> bool:
        return self.outcome is Outcome.REJECT


def fail_to_reject(reason: Reason, **kwargs) -> Decision:
    return Decision(Outcome.FAIL_TO_REJECT, reason, **kwargs)


@dataclass(frozen=True)
class MCConfig:
    """Monte Carlo test configuration"""
    k: int = 1000        # number of simulated null statistics, must exceed 1/alpha
    alpha: float = 0.05  # target significance

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidConfig(f"alpha must be in (0, 1), got {self.alpha}")
        if self.k <= 1 / self.alpha:
            raise InvalidConfig(f"K must exceed 1/alpha = {1 / self.alpha:g}, got {self.k}")

    @property
    def rank_index(self) -> int:
        """1-based order statistic compared against: ceil((K+1)(1-alpha))"""
        return order_index(self.k, 1 - self.alpha)

    @property
    def interval_indices(self) -> Tuple[int, int]:
        """1-based (l, r) for a two-sided (1-alpha) percentile interval"""
        return interval_indices(self.k, self.alpha)


def order_index(k: int, level: float) -> int:
    return min(k, math.ceil((k + 1) * level - _CEIL_SLACK))


def interval_indices(k: int, alpha: float) -> Tuple[int, int]:
    return max(1, order_index(k, alpha / 2)), order_index(k, 1 - alpha / 2)


class MonteCarloProcedure(Protocol):
    """What mc_test needs from a tester"""

    def private_stats(self, data, rng: RandomSource) -> ThetaPair: ...

    def statistic(self, theta1) -> float: ...

    def null_statistics(self, theta0, k: int, rng: RandomSource) -> np.ndarray: ...


def mc_test(data, procedure: MonteCarloProcedure, cfg: MCConfig,
            rng: RandomSource) -> Decision:
    """
    Monte Carlo DP test

    Bottom -> fail to reject. Otherwise simulate K null statistics (a simulated
    Bottom counts as -inf), sort, and reject iff the private statistic is
    strictly above the ceil((K+1)(1-alpha))-th smallest.
    """
    pair = procedure.private_stats(data, rng)
    if pair.is_bottom:
        return fail_to_reject(Reason.BOTTOM_THETA)

    try:
        t = procedure.statistic(pair.alt)
    except DegenerateStat as exc:
        logger.debug("private statistic degenerate: %s", exc)
        return fail_to_reject(Reason.DEGENERATE_STAT)

    simulated = np.sort(np.asarray(procedure.null_statistics(pair.null, cfg.k, rng)))
    threshold = float(simulated[cfg.rank_index - 1])
    below = int(np.searchsorted(simulated, t, side="left"))
    p_value = (cfg.k + 1 - below) / (cfg.k + 1)
    bottoms = int(np.sum(np.isneginf(simulated)))
    if bottoms:
        logger.debug("%d of %d simulated runs were Bottom", bottoms, cfg.k)

    if t > threshold:
        return Decision(Outcome.REJECT, Reason.RANK_EXCEEDED, t, threshold, p_value)
    return fail_to_reject(Reason.RANK_NOT_EXCEEDED, statistic=t, threshold=threshold,
                          p_value=p_value)


def batch_sizes(k: int, n: int):
    rows = max(1, _CHUNK_CELLS // max(n, 1))
    for start in range(0, k, rows):
        yield min(rows, k - start)


# ---------------------------------------------------------------------------
# Null samplers
# ---------------------------------------------------------------------------

def null_sample_linear_batch(theta0: ThetaLinearNull, size: int, n: int,
                             rng: RandomSource) -> Tuple[np.ndarray, np.ndarray]:
    """x ~ N(xbar~, var~), y = beta2~ + N(0, S0~^2); arrays shaped (size, n)"""
    x = rng.normal(theta0.xbar, np.sqrt(theta0.x_variance), size=(size, n))
    y = theta0.beta2 + rng.normal(0.0, np.sqrt(theta0.s0_sq), size=(size, n))
    return x, y


def null_sampler_linear(theta0: ThetaLinearNull, n: int, rng: RandomSource) -> Dataset:
    x, y = null_sample_linear_batch(theta0, 1, n, rng)
    return Dataset(x[0], y[0])


def null_sample_mixture_batch(theta0: ThetaMixtureNull, size: int,
                              rng: RandomSource) -> Tuple[np.ndarray, np.ndarray]:
    """x ~ N(xbar~, var~), y = slope~ x + N(0, S0~^2) for both groups"""
    shape = (size, theta0.n)
    x = rng.normal(theta0.xbar, np.sqrt(theta0.x_variance), size=shape)
    y = theta0.slope * x + rng.normal(0.0, np.sqrt(theta0.s0_sq), size=shape)
    return x, y


def null_sampler_mixture(theta0: ThetaMixtureNull, rng: RandomSource) -> GroupedDataset:
    x, y = null_sample_mixture_batch(theta0, 1, rng)
    return GroupedDataset(x[0], y[0], theta0.n1)


# ---------------------------------------------------------------------------
# F-statistic testers
# ---------------------------------------------------------------------------

@dataclass
class LinearFTester:
    """Private F test for a linear relationship (H0: slope = 0)"""
    budget: PrivacyBudget
    delta: ClipBound = ClipBound(2.0)
    cfg: MCConfig = field(default_factory=MCConfig)
    literal_residual_term: bool = False
    name: str = "linear-f"

    def private_stats(self, d: Dataset, rng: RandomSource) -> ThetaPair:
        return dp_stats_linear(d, self.budget, self.delta, rng, self.literal_residual_term)

    def statistic(self, theta1) -> float:
        return private_f_stat_linear(theta1)

    def null_statistics(self, theta0: ThetaLinearNull, k: int,
                        rng: RandomSource) -> np.ndarray:
        out = []
        for size in batch_sizes(k, theta0.n):
            x, y = null_sample_linear_batch(theta0, size, theta0.n, rng)
            batch = dp_stats_linear_batch(x, y, self.budget, self.delta, rng,
                                          self.literal_residual_term)
            out.append(linear_batch_statistics(batch))
        return np.concatenate(out)

    def __call__(self, d: Dataset, rng: RandomSource) -> Decision:
        return mc_test(d, self, self.cfg, rng)


@dataclass
class MixtureFTester:
    """
    Private F test for a mixture of two lines (H0: shared slope)

    S~^2 weights the squared group slopes by their x2bar by default; set
    literal_residual_term for the unweighted n_j * beta_j^2 terms.
    """
    budget: PrivacyBudget
    delta: ClipBound = ClipBound(2.0)
    cfg: MCConfig = field(default_factory=MCConfig)
    null_slope: str = NULL_SLOPE_POOLED  # "pooled" or "group1"
    literal_residual_term: bool = False
    name: str = "mixture-f"

    def private_stats(self, g: GroupedDataset, rng: RandomSource) -> ThetaPair:
        return dp_stats_mixture(g, self.budget, self.delta, rng, self.null_slope,
                                self.literal_residual_term)

    def statistic(self, theta1) -> float:
        return private_f_stat_mixture(theta1)

    def null_statistics(self, theta0: ThetaMixtureNull, k: int,
                        rng: RandomSource) -> np.ndarray:
        out = []
        for size in batch_sizes(k, theta0.n):
            x, y = null_sample_mixture_batch(theta0, size, rng)
            batch = dp_stats_mixture_batch(x, y, theta0.n1, self.budget, self.delta,
                                           rng, self.literal_residual_term)
            out.append(mixture_batch_statistics(batch))
        return np.concatenate(out)

    def __call__(self, g: GroupedDataset, rng: RandomSource) -> Decision:
        return mc_test(g, self, self.cfg, rng)


# ---------------------------------------------------------------------------
# Confidence-interval dual
# ---------------------------------------------------------------------------

CI_SAMPLER_RELEASE = "release"
CI_SAMPLER_NORMAL = "normal"


def fitted_sample_linear_batch(theta0: ThetaLinearNull, theta1: ThetaLinearAlt, size: int,
                               rng: RandomSource) -> Tuple[np.ndarray, np.ndarray]:
    """x ~ N(xbar~, var~), y = beta2~ + beta1~ x + N(0, S~^2); arrays shaped (size, n)"""
    shape = (size, theta1.n)
    x = rng.normal(theta0.xbar, np.sqrt(theta0.x_variance), size=shape)
    y = theta0.beta2 + theta1.beta1 * x + rng.normal(0.0, np.sqrt(theta1.s_sq), size=shape)
    return x, y


def bootstrap_slopes(pair: ThetaPair, k: int, budget: PrivacyBudget, delta: ClipBound,
                     rng: RandomSource) -> np.ndarray:
    """
    Private slopes of k datasets simulated from the privately fitted line

    Every simulated dataset is clipped and noised with the full budget, so the
    spread of the returned slopes covers the privacy noise as well as the
    sampling noise. Runs whose noised x variance is not positive have no slope
    and are left out.
    """
    out = []
    for size in batch_sizes(k, pair.alt.n):
        x, y = fitted_sample_linear_batch(pair.null, pair.alt, size, rng)
        batch = dp_stats_linear_batch(x, y, budget, delta, rng)
        out.append(batch.beta1[batch.x2bar - batch.xbar ** 2 > 0])
    slopes = np.concatenate(out)
    return slopes[np.isfinite(slopes)]


def ci_bootstrap_test(d: Dataset, budget: PrivacyBudget, delta: ClipBound,
                      cfg: MCConfig, target_slope: float, rng: RandomSource,
                      slope_sampler: str = CI_SAMPLER_RELEASE) -> Decision:
    """
    Reject iff target_slope lies outside a parametric-bootstrap interval for the slope

    Args:
        slope_sampler: "release" re-runs the private release on data simulated
            from the fitted line (see bootstrap_slopes); "normal" draws slopes
            from N(beta1~, S~^2 / (n x2bar~ - n xbar~^2)), which leaves out the
            privacy noise and is only calibrated when sampling noise dominates
    """
    if slope_sampler not in (CI_SAMPLER_RELEASE, CI_SAMPLER_NORMAL):
        raise InvalidConfig(f"unknown slope_sampler {slope_sampler!r}")
    pair = dp_stats_linear(d, budget, delta, rng)
    if pair.is_bottom:
        return fail_to_reject(Reason.BOTTOM_THETA)
    alt = pair.alt
    nvar = alt.n * alt.x2bar - alt.n * alt.xbar ** 2
    if nvar <= 0 or alt.s_sq <= 0:
        logger.debug("slope variance degenerate (nvar=%.4g, s_sq=%.4g)", nvar, alt.s_sq)
        return fail_to_reject(Reason.DEGENERATE_STAT)

    if slope_sampler == CI_SAMPLER_NORMAL:
        slopes = rng.normal(alt.beta1, np.sqrt(alt.s_sq / nvar), size=cfg.k)
    else:
        slopes = bootstrap_slopes(pair, cfg.k, budget, delta, rng)
    if slopes.size <= 1 / cfg.alpha:
        logger.debug("only %d of %d bootstrap slopes defined", slopes.size, cfg.k)
        return fail_to_reject(Reason.DEGENERATE_STAT, statistic=alt.beta1)

    slopes = np.sort(slopes)
    l, r = interval_indices(slopes.size, cfg.alpha)
    interval = (float(slopes[l - 1]), float(slopes[r - 1]))
    inside = interval[0] < target_slope < interval[1]
    if inside:
        return fail_to_reject(Reason.CI_INCLUSION, statistic=alt.beta1, interval=interval)
    return Decision(Outcome.REJECT, Reason.CI_EXCLUSION, statistic=alt.beta1,
                    interval=interval)


@dataclass
class CIBootstrapTester:
    """Confidence-interval tester for H0: slope = target_slope"""
    budget: PrivacyBudget
    delta: ClipBound = ClipBound(2.0)
    cfg: MCConfig = field(default_factory=MCConfig)
    target_slope: float = 0.0
    slope_sampler: str = CI_SAMPLER_RELEASE  # "release" or "normal"
    name: str = "ci"

    def __post_init__(self):
        if self.slope_sampler not in (CI_SAMPLER_RELEASE, CI_SAMPLER_NORMAL):
            raise InvalidConfig(f"unknown slope_sampler {self.slope_sampler!r}")

    def __call__(self, d: Dataset, rng: RandomSource) -> Decision:
        return ci_bootstrap_test(d, self.budget, self.delta, self.cfg,
                                 self.target_slope, rng, self.slope_sampler)


if __name__ == "__main__":
    print("=" * 60)
    print("MONTE CARLO LINEAR TEST")
    print("=" * 60)

    rng = RandomSource(seed=3)
    x = rng.normal(0.5, 1.0, 500)
    for slope in (0.0, 1.0):
        d = Dataset(x, slope * x + rng.normal(0.0, 0.35, 500))
        tester = LinearFTester(PrivacyBudget(0.5))
        decision = tester(d, rng)
        print(f"\nTrue slope {slope}:")
        print(f"  Decision:  {decision.outcome.value} ({decision.reason.value})")
        print(f"  Statistic: {decision.statistic}")
        print(f"  Threshold: {decision.threshold}")
