"""
General Linear Model Math for Simple Regression
OLS fits, F statistics and the E/F/G reformulation, computed from sufficient statistics

Two designs are supported:
- Linear relationship: y = b2 + b1 x + e, null b1 = 0
- Mixture of two lines through the origin: y = b_g x + e for group g, null b1 = b2

Both designs have r = 2 parameters and a q = 1 dimensional null.
"""

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from errors import (InvalidConfig, NegativeVariance, NonpositiveDenominator,
                    SingularDesign, ZeroVariance)

logger = logging.getLogger(__name__)

R = 2  # parameters under the alternative
Q = 1  # parameters under the null

# RSS below this fraction of n * var(y) is treated as an exact fit
_RSS_SNAP = 1e-12
# Rounding floor of a difference of second moments, relative to their size
_ROUND_SNAP = 64 * np.finfo(float).eps
# Variance of x below this fraction of mean(x^2) is treated as a constant column
_VAR_SNAP = 1e-12

ArrayLike = Union[float, np.ndarray]


@dataclass
class Dataset:
    """Paired observations (x_i, y_i); one row is the unit of privacy"""
    x: np.ndarray  # independent variable
    y: np.ndarray  # dependent variable

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.x.shape != self.y.shape:
            raise InvalidConfig(f"x and y lengths differ: {self.x.size} vs {self.y.size}")
        if self.x.size < 1:
            raise InvalidConfig("dataset is empty")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise InvalidConfig("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return int(self.x.size)


@dataclass
class GroupedDataset:
    """
    Two public groups stacked row-wise: rows [0, n1) are group 1, rows [n1, n) group 2
    """
    x: np.ndarray
    y: np.ndarray
    n1: int  # size of group 1

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.n1 = int(self.n1)
        if self.x.shape != self.y.shape:
            raise InvalidConfig(f"x and y lengths differ: {self.x.size} vs {self.y.size}")
        if not 0 < self.n1 < self.x.size:
            raise InvalidConfig(f"need 0 < n1 < n, got n1={self.n1}, n={self.x.size}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise InvalidConfig("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return int(self.x.size)

    @property
    def n2(self) -> int:
        return self.n - self.n1

    def group1(self) -> Dataset:
        return Dataset(self.x[:self.n1], self.y[:self.n1])

    def group2(self) -> Dataset:
        return Dataset(self.x[self.n1:], self.y[self.n1:])

    def swapped(self) -> "GroupedDataset":
        """Same data with group labels exchanged"""
        return GroupedDataset(np.concatenate([self.x[self.n1:], self.x[:self.n1]]),
                              np.concatenate([self.y[self.n1:], self.y[:self.n1]]),
                              self.n2)


@dataclass(frozen=True)
class SuffStatsRaw:
    """
    Sample averages of x, y, x^2, xy, y^2

    For exact data x2bar >= xbar^2 and y2bar >= ybar^2; noised moments can break
    both, so nothing downstream may assume them.
    """
    xbar: float
    ybar: float
    x2bar: float
    xybar: float
    y2bar: float
    n: int

    @property
    def var_x(self) -> float:
        """Biased sample variance of x"""
        return self.x2bar - self.xbar ** 2

    @property
    def var_y(self) -> float:
        return self.y2bar - self.ybar ** 2

    @property
    def cov_xy(self) -> float:
        return self.xybar - self.xbar * self.ybar


@dataclass(frozen=True)
class MixtureSuffStats:
    """Per-group second moments for the two-line mixture design"""
    n1: int
    n2: int
    x2bar1: float
    x2bar2: float
    xybar1: float
    xybar2: float
    y2bar1: float
    y2bar2: float

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    @property
    def x2bar(self) -> float:
        """Pooled mean of x^2"""
        return (self.n1 * self.x2bar1 + self.n2 * self.x2bar2) / self.n


@dataclass(frozen=True)
class OlsFit:
    """Least-squares fit; beta2 is the intercept (linear) or group-2 slope (mixture)"""
    beta1: float
    beta2: float
    s2: float   # unbiased error variance rss / (n - r)
    rss: float  # residual sum of squares


@dataclass(frozen=True)
class EFGDecomposition:
    """E = sqrt(X^T X / n), F = X^T Y / n, G = Y^T Y / n for the linear design"""
    E: np.ndarray  # 2x2 symmetric positive (semi)definite
    F: np.ndarray  # (ybar, xybar)
    G: float       # y2bar


# ---------------------------------------------------------------------------
# Shared formulas (scalars or numpy arrays; used by the private path as well)
# ---------------------------------------------------------------------------

def linear_betas(xbar: ArrayLike, ybar: ArrayLike, x2bar: ArrayLike,
                 xybar: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """Slope and intercept from moments; caller guarantees x2bar - xbar^2 != 0"""
    var_x = x2bar - xbar ** 2
    beta1 = (xybar - xbar * ybar) / var_x
    beta2 = (ybar * x2bar - xbar * xybar) / var_x
    return beta1, beta2


def linear_rss(n: int, xbar: ArrayLike, ybar: ArrayLike, x2bar: ArrayLike,
               xybar: ArrayLike, y2bar: ArrayLike, beta1: ArrayLike,
               beta2: ArrayLike) -> ArrayLike:
    """||Y - X beta||^2 expanded in moments"""
    return n * (y2bar - 2 * beta2 * ybar - 2 * beta1 * xybar + beta2 ** 2
                + 2 * beta1 * beta2 * xbar + beta1 ** 2 * x2bar)


def linear_f_from_pieces(beta1: ArrayLike, var_x: ArrayLike, s2: ArrayLike,
                         n: int) -> ArrayLike:
    """T = beta1^2 * n * var_x / S^2"""
    return beta1 ** 2 * n * var_x / s2


def mixture_rss(n1: int, n2: int, x2bar1: ArrayLike, x2bar2: ArrayLike,
                xybar1: ArrayLike, xybar2: ArrayLike, y2bar1: ArrayLike,
                y2bar2: ArrayLike, beta1: ArrayLike, beta2: ArrayLike) -> ArrayLike:
    return (n1 * (y2bar1 - 2 * beta1 * xybar1 + beta1 ** 2 * x2bar1)
            + n2 * (y2bar2 - 2 * beta2 * xybar2 + beta2 ** 2 * x2bar2))


def mixture_f_from_pieces(beta1: ArrayLike, beta2: ArrayLike, n1: int, n2: int,
                          x2bar1: ArrayLike, x2bar2: ArrayLike, x2bar: ArrayLike,
                          s2: ArrayLike) -> ArrayLike:
    """T = (n1 x2bar1 * n2 x2bar2) / (S^2 n x2bar) * (beta1 - beta2)^2"""
    n = n1 + n2
    return (n1 * x2bar1 * n2 * x2bar2) / (s2 * n * x2bar) * (beta1 - beta2) ** 2


# ---------------------------------------------------------------------------
# Linear relationship
# ---------------------------------------------------------------------------

def suff_stats(d: Dataset) -> SuffStatsRaw:
    """Exact sample averages (no clipping, no noise)"""
    x, y = d.x, d.y
    return SuffStatsRaw(xbar=float(np.mean(x)), ybar=float(np.mean(y)),
                        x2bar=float(np.mean(x * x)), xybar=float(np.mean(x * y)),
                        y2bar=float(np.mean(y * y)), n=d.n)


def ols_linear(s: SuffStatsRaw) -> OlsFit:
    """
    Least squares for y = beta2 + beta1 x

    Raises:
        SingularDesign: x has (numerically) zero variance
    """
    if s.n <= R:
        raise InvalidConfig(f"need n > {R} observations, got {s.n}")
    var_x = s.var_x
    if var_x <= _VAR_SNAP * abs(s.x2bar):
        raise SingularDesign(f"x has no spread (var_x={var_x:.3g})")

    beta1, beta2 = linear_betas(s.xbar, s.ybar, s.x2bar, s.xybar)
    # centered form; the expanded moment identity loses digits to a large y offset
    var_y = s.var_y
    rss = s.n * (var_y - s.cov_xy ** 2 / var_x)
    if rss <= s.n * (_RSS_SNAP * max(var_y, 0.0) + _ROUND_SNAP * s.ybar ** 2):
        rss = 0.0
    return OlsFit(beta1=float(beta1), beta2=float(beta2), s2=rss / (s.n - R), rss=rss)


def f_stat_linear(fit: OlsFit, s: SuffStatsRaw) -> float:
    """
    F statistic for H0: slope = 0

    Raises:
        ZeroVariance: perfect fit (S^2 = 0)
    """
    if fit.s2 <= 0:
        raise ZeroVariance("residual variance is zero; F statistic undefined")
    return float(linear_f_from_pieces(fit.beta1, s.var_x, fit.s2, s.n))


# ---------------------------------------------------------------------------
# Mixture of two lines
# ---------------------------------------------------------------------------

def mixture_suff_stats(g: GroupedDataset) -> MixtureSuffStats:
    x1, y1 = g.x[:g.n1], g.y[:g.n1]
    x2, y2 = g.x[g.n1:], g.y[g.n1:]
    return MixtureSuffStats(n1=g.n1, n2=g.n2,
                            x2bar1=float(np.mean(x1 * x1)), x2bar2=float(np.mean(x2 * x2)),
                            xybar1=float(np.mean(x1 * y1)), xybar2=float(np.mean(x2 * y2)),
                            y2bar1=float(np.mean(y1 * y1)), y2bar2=float(np.mean(y2 * y2)))


def ols_mixture(g: GroupedDataset) -> OlsFit:
    """
    Per-group slopes through the origin

    Returns:
        OlsFit with beta1 = group-1 slope, beta2 = group-2 slope
    """
    if g.n <= R:
        raise InvalidConfig(f"need n > {R} observations, got {g.n}")
    m = mixture_suff_stats(g)
    if m.x2bar1 <= 0 or m.x2bar2 <= 0:
        raise SingularDesign("a group has an all-zero independent variable")

    beta1 = m.xybar1 / m.x2bar1
    beta2 = m.xybar2 / m.x2bar2
    rss = (m.n1 * (m.y2bar1 - m.xybar1 * beta1)
           + m.n2 * (m.y2bar2 - m.xybar2 * beta2))
    pooled_y2 = (m.n1 * m.y2bar1 + m.n2 * m.y2bar2) / m.n
    if rss <= _ROUND_SNAP * m.n * max(pooled_y2, 0.0):
        rss = 0.0
    return OlsFit(beta1=float(beta1), beta2=float(beta2), s2=rss / (m.n - R), rss=rss)


def f_stat_mixture(fit: OlsFit, m: MixtureSuffStats) -> float:
    """F statistic for H0: the two groups share one slope"""
    if fit.s2 <= 0:
        raise ZeroVariance("residual variance is zero; F statistic undefined")
    if m.x2bar <= 0:
        raise SingularDesign("pooled mean of x^2 is zero")
    return float(mixture_f_from_pieces(fit.beta1, fit.beta2, m.n1, m.n2,
                                       m.x2bar1, m.x2bar2, m.x2bar, fit.s2))


# ---------------------------------------------------------------------------
# E/F/G reformulation
# ---------------------------------------------------------------------------

def efg_decompose(s: SuffStatsRaw) -> EFGDecomposition:
    """
    Closed-form square root of X^T X / n = [[1, xbar], [xbar, x2bar]]

    Raises:
        NegativeVariance: x2bar - xbar^2 < 0
    """
    var_x = s.var_x
    if var_x < 0:
        raise NegativeVariance(f"x2bar - xbar^2 = {var_x:.3g} < 0")
    sd = np.sqrt(var_x)
    scale = 1.0 / np.sqrt(s.x2bar + 1.0 + 2.0 * sd)
    E = scale * np.array([[1.0 + sd, s.xbar],
                          [s.xbar, s.x2bar + sd]])
    return EFGDecomposition(E=E, F=np.array([s.ybar, s.xybar]), G=float(s.y2bar))


def linear_design_betas(fit: OlsFit, s: SuffStatsRaw) -> Tuple[np.ndarray, np.ndarray]:
    """(beta, beta_null) ordered as (intercept, slope) to match the design columns"""
    return np.array([fit.beta2, fit.beta1]), np.array([s.ybar, 0.0])


def f_stat_reformulated(e: EFGDecomposition, beta: np.ndarray, beta_null: np.ndarray,
                        n: int, r: int = R, q: int = Q) -> float:
    """
    F statistic written as ||sqrt(n) E (b - bN)||^2 over n (b'E^2 b - 2 b'F + G)

    Raises:
        NonpositiveDenominator: the residual term is not positive
    """
    beta = np.asarray(beta, dtype=float)
    beta_null = np.asarray(beta_null, dtype=float)
    E2 = e.E @ e.E
    denominator = n * (beta @ E2 @ beta - 2.0 * beta @ e.F + e.G)
    if not denominator > 0:
        raise NonpositiveDenominator(f"residual term {denominator:.3g} is not positive")
    diff = e.E @ (beta - beta_null)
    numerator = n * float(diff @ diff)
    return float((n - r) / (r - q) * numerator / denominator)


if __name__ == "__main__":
    print("=" * 60)
    print("LINEAR MODEL SELF-CHECK")
    print("=" * 60)

    rng = np.random.default_rng(0)
    x = rng.normal(0.5, 1.0, 200)
    y = 0.3 * x + rng.normal(0.0, 1.0, 200)
    d = Dataset(x, y)
    s = suff_stats(d)
    fit = ols_linear(s)
    beta, beta_null = linear_design_betas(fit, s)

    print(f"\nSlope: {fit.beta1:.4f}  Intercept: {fit.beta2:.4f}  S^2: {fit.s2:.4f}")
    print(f"F (direct):       {f_stat_linear(fit, s):.6f}")
    print(f"F (reformulated): {f_stat_reformulated(efg_decompose(s), beta, beta_null, s.n):.6f}")
