"""
Sufficient-Statistic Perturbation Testers
rho-zCDP release of clipped regression moments and the private F statistics built on them

DPStats for the linear-relationship test spends rho/5 on each of five moments;
DPStats for the mixture test spends rho/8 on each of eight per-group moments.
Both return Bottom when the noised moments cannot parameterise a null model.

The release kernels work on a batch of datasets at once (arrays shaped
(batch, n)) so the Monte Carlo null simulation pushes its synthetic datasets
through exactly the same code as the real data.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from dp_primitives import (ClipBound, PrivacyBudget, RandomSource, clip,
                           gaussian_mech, split_budget)
from errors import InvalidConfig, NonpositiveVariancePiece
from linear_model import (R, Dataset, GroupedDataset, linear_betas,
                          linear_f_from_pieces, linear_rss, mixture_f_from_pieces,
                          mixture_rss)

logger = logging.getLogger(__name__)

LINEAR_RELEASES = 5
MIXTURE_RELEASES = 8

NULL_SLOPE_POOLED = "pooled"
NULL_SLOPE_GROUP1 = "group1"


# ---------------------------------------------------------------------------
# Released statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThetaLinearNull:
    """Private statistics used to simulate the no-slope null"""
    beta2: float   # private intercept
    xbar: float
    x2bar: float
    s0_sq: float   # private error variance under the null
    n: int

    @property
    def x_variance(self) -> float:
        """Unbiased-style variance for simulating x: (n x2bar - n xbar^2) / (n - 1)"""
        return self.n * (self.x2bar - self.xbar ** 2) / (self.n - 1)


@dataclass(frozen=True)
class ThetaLinearAlt:
    """Private statistics feeding the F statistic"""
    beta1: float   # private slope
    xbar: float
    x2bar: float
    s_sq: float    # private error variance under the alternative
    n: int


@dataclass(frozen=True)
class ThetaMixtureNull:
    slope: float   # shared slope of the null model
    xbar: float
    x2bar: float
    s0_sq: float
    n1: int
    n2: int
    n: int

    @property
    def x_variance(self) -> float:
        return self.n * (self.x2bar - self.xbar ** 2) / (self.n - 1)


@dataclass(frozen=True)
class ThetaMixtureAlt:
    beta1: float
    beta2: float
    x2bar1: float
    x2bar2: float
    x2bar: float
    s_sq: float
    n1: int
    n2: int
    n: int


Theta0 = Union[ThetaLinearNull, ThetaMixtureNull]
Theta1 = Union[ThetaLinearAlt, ThetaMixtureAlt]


@dataclass(frozen=True)
class ThetaPair:
    """Either Bottom (both None) or a (null, alternative) statistics pair"""
    null: Optional[Theta0] = None
    alt: Optional[Theta1] = None

    @property
    def is_bottom(self) -> bool:
        return self.null is None


BOTTOM = ThetaPair()


@dataclass
class LinearBatch:
    """Per-dataset private statistics for a batch of linear-design datasets"""
    n: int
    xbar: np.ndarray
    ybar: np.ndarray
    x2bar: np.ndarray
    xybar: np.ndarray
    y2bar: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    s0_sq: np.ndarray
    s_sq: np.ndarray
    gate: np.ndarray  # True where the variance gate passed (not Bottom)


@dataclass
class MixtureBatch:
    n1: int
    n2: int
    xbar: np.ndarray
    x2bar: np.ndarray
    x2bar1: np.ndarray
    x2bar2: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    beta: np.ndarray     # pooled slope
    s0_sq: np.ndarray
    s_sq: np.ndarray
    gate: np.ndarray

    @property
    def n(self) -> int:
        return self.n1 + self.n2


def _clipped_mean(v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.mean(clip(v, lo, hi), axis=-1)


# ---------------------------------------------------------------------------
# Linear relationship
# ---------------------------------------------------------------------------

def dp_stats_linear_batch(x: np.ndarray, y: np.ndarray, budget: PrivacyBudget,
                          delta: ClipBound, rng: RandomSource,
                          literal_residual_term: bool = False) -> LinearBatch:
    """
    Private moments and derived statistics for each row of x, y (shape (batch, n))

    Args:
        literal_residual_term: Use beta1^2 * n * xybar as the last S^2 term
            instead of beta1^2 * n * x2bar
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = x.shape[-1]
    part = split_budget(budget, LINEAR_RELEASES)[0]
    D = delta.delta
    D2 = D * D

    xbar = gaussian_mech(_clipped_mean(x, -D, D), 2 * D / n, part, rng)
    ybar = gaussian_mech(_clipped_mean(y, -D, D), 2 * D / n, part, rng)
    x2bar = gaussian_mech(_clipped_mean(x * x, 0.0, D2), D2 / n, part, rng)
    xybar = gaussian_mech(_clipped_mean(x * y, -D2, D2), 2 * D2 / n, part, rng)
    y2bar = gaussian_mech(_clipped_mean(y * y, 0.0, D2), D2 / n, part, rng)

    var_x = x2bar - xbar ** 2
    usable = var_x > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        beta1, beta2 = linear_betas(xbar, ybar, x2bar, xybar)
        s0_sq = n * (y2bar - 2 * beta2 * ybar + beta2 ** 2) / (n - R)
        last_moment = xybar if literal_residual_term else x2bar
        s_sq = linear_rss(n, xbar, ybar, last_moment, xybar, y2bar, beta1, beta2) / (n - R)
        gate = usable & (s0_sq > 0) & (n * var_x / (n - 1) > 0)

    return LinearBatch(n=n, xbar=xbar, ybar=ybar, x2bar=x2bar, xybar=xybar,
                       y2bar=y2bar, beta1=beta1, beta2=beta2, s0_sq=s0_sq,
                       s_sq=s_sq, gate=gate)


def linear_batch_statistics(batch: LinearBatch) -> np.ndarray:
    """F statistic per dataset; -inf where Bottom or the statistic is degenerate"""
    var_x = batch.x2bar - batch.xbar ** 2
    ok = batch.gate & (var_x > 0) & (batch.s_sq > 0)
    out = np.full(batch.beta1.shape, -np.inf)
    out[ok] = linear_f_from_pieces(batch.beta1[ok], var_x[ok], batch.s_sq[ok], batch.n)
    return out


def dp_stats_linear(d: Dataset, budget: PrivacyBudget, delta: ClipBound,
                    rng: RandomSource, literal_residual_term: bool = False) -> ThetaPair:
    """
    rho-zCDP sufficient statistics for testing a linear relationship

    Returns:
        ThetaPair with (ThetaLinearNull, ThetaLinearAlt), or BOTTOM when the
        noised variance pieces are not positive
    """
    if d.n < 3:
        raise InvalidConfig(f"linear DPStats needs n >= 3, got {d.n}")
    b = dp_stats_linear_batch(d.x[None, :], d.y[None, :], budget, delta, rng,
                              literal_residual_term)
    if not b.gate[0]:
        logger.debug("linear DPStats returned Bottom (s0_sq=%.4g, var_x=%.4g)",
                     b.s0_sq[0], b.x2bar[0] - b.xbar[0] ** 2)
        return BOTTOM
    null = ThetaLinearNull(beta2=float(b.beta2[0]), xbar=float(b.xbar[0]),
                           x2bar=float(b.x2bar[0]), s0_sq=float(b.s0_sq[0]), n=d.n)
    alt = ThetaLinearAlt(beta1=float(b.beta1[0]), xbar=float(b.xbar[0]),
                         x2bar=float(b.x2bar[0]), s_sq=float(b.s_sq[0]), n=d.n)
    return ThetaPair(null, alt)


def private_f_stat_linear(theta1: ThetaLinearAlt) -> float:
    """
    Non-private F formula evaluated on private statistics

    Raises:
        NonpositiveVariancePiece: x2bar~ - xbar~^2 <= 0 or S~^2 <= 0
    """
    var_x = theta1.x2bar - theta1.xbar ** 2
    if var_x <= 0:
        raise NonpositiveVariancePiece(f"private var_x = {var_x:.4g}")
    if theta1.s_sq <= 0:
        raise NonpositiveVariancePiece(f"private S^2 = {theta1.s_sq:.4g}")
    return float(linear_f_from_pieces(theta1.beta1, var_x, theta1.s_sq, theta1.n))


# ---------------------------------------------------------------------------
# Mixture of two lines
# ---------------------------------------------------------------------------

def dp_stats_mixture_batch(x: np.ndarray, y: np.ndarray, n1: int,
                           budget: PrivacyBudget, delta: ClipBound,
                           rng: RandomSource,
                           literal_residual_term: bool = False) -> MixtureBatch:
    """
    Private per-group moments for each row of x, y (shape (batch, n)); columns
    [0, n1) are group 1

    Args:
        literal_residual_term: Drop the x2bar factors from the residual terms,
            leaving plain n_j * beta_j^2
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = x.shape[-1]
    n2 = n - n1
    part = split_budget(budget, MIXTURE_RELEASES)[0]
    D = delta.delta
    D2 = D * D
    x1, y1 = x[:, :n1], y[:, :n1]
    x2, y2 = x[:, n1:], y[:, n1:]

    xbar1 = gaussian_mech(_clipped_mean(x1, -D, D), 2 * D / n1, part, rng)
    xbar2 = gaussian_mech(_clipped_mean(x2, -D, D), 2 * D / n2, part, rng)
    x2bar1 = gaussian_mech(_clipped_mean(x1 * x1, 0.0, D2), D2 / n1, part, rng)
    x2bar2 = gaussian_mech(_clipped_mean(x2 * x2, 0.0, D2), D2 / n2, part, rng)
    xybar1 = gaussian_mech(_clipped_mean(x1 * y1, -D2, D2), 2 * D2 / n1, part, rng)
    xybar2 = gaussian_mech(_clipped_mean(x2 * y2, -D2, D2), 2 * D2 / n2, part, rng)
    y2bar1 = gaussian_mech(_clipped_mean(y1 * y1, 0.0, D2), D2 / n1, part, rng)
    y2bar2 = gaussian_mech(_clipped_mean(y2 * y2, 0.0, D2), D2 / n2, part, rng)

    w1, w2 = n1 / n, n2 / n
    xbar = w1 * xbar1 + w2 * xbar2
    x2bar = w1 * x2bar1 + w2 * x2bar2
    xybar = w1 * xybar1 + w2 * xybar2
    y2bar = w1 * y2bar1 + w2 * y2bar2

    usable = (x2bar1 > 0) & (x2bar2 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        beta1 = xybar1 / x2bar1
        beta2 = xybar2 / x2bar2
        beta = w1 * beta1 + w2 * beta2
        if literal_residual_term:
            one = np.ones_like(x2bar)
            s0_sq = n * (y2bar - 2 * beta * xybar + beta ** 2) / (n - R)
            s_sq = mixture_rss(n1, n2, one, one, xybar1, xybar2, y2bar1, y2bar2,
                               beta1, beta2) / (n - R)
        else:
            s0_sq = n * (y2bar - 2 * beta * xybar + beta ** 2 * x2bar) / (n - R)
            s_sq = mixture_rss(n1, n2, x2bar1, x2bar2, xybar1, xybar2, y2bar1,
                               y2bar2, beta1, beta2) / (n - R)
        gate = usable & (s0_sq > 0) & (n * (x2bar - xbar ** 2) / (n - 1) > 0)

    return MixtureBatch(n1=n1, n2=n2, xbar=xbar, x2bar=x2bar, x2bar1=x2bar1,
                        x2bar2=x2bar2, beta1=beta1, beta2=beta2, beta=beta,
                        s0_sq=s0_sq, s_sq=s_sq, gate=gate)


def mixture_batch_statistics(batch: MixtureBatch) -> np.ndarray:
    ok = batch.gate & (batch.s_sq > 0) & (batch.x2bar > 0)
    out = np.full(batch.beta1.shape, -np.inf)
    out[ok] = mixture_f_from_pieces(batch.beta1[ok], batch.beta2[ok], batch.n1,
                                    batch.n2, batch.x2bar1[ok], batch.x2bar2[ok],
                                    batch.x2bar[ok], batch.s_sq[ok])
    return out


def dp_stats_mixture(g: GroupedDataset, budget: PrivacyBudget, delta: ClipBound,
                     rng: RandomSource, null_slope: str = NULL_SLOPE_POOLED,
                     literal_residual_term: bool = False) -> ThetaPair:
    """
    rho-zCDP sufficient statistics for testing whether two groups share a slope

    Args:
        null_slope: "pooled" simulates the null with the pooled private slope,
            "group1" with the group-1 slope
        literal_residual_term: The default residual terms weight each squared
            slope by its group x2bar; True gives the unweighted n_j * beta_j^2
            form instead
    """
    if g.n1 < 2 or g.n2 < 2:
        raise InvalidConfig(f"mixture DPStats needs both groups >= 2, got {g.n1}, {g.n2}")
    if null_slope not in (NULL_SLOPE_POOLED, NULL_SLOPE_GROUP1):
        raise InvalidConfig(f"unknown null_slope {null_slope!r}")
    b = dp_stats_mixture_batch(g.x[None, :], g.y[None, :], g.n1, budget, delta, rng,
                               literal_residual_term)
    if not b.gate[0]:
        logger.debug("mixture DPStats returned Bottom (s0_sq=%.4g, x2bar1=%.4g, x2bar2=%.4g)",
                     b.s0_sq[0], b.x2bar1[0], b.x2bar2[0])
        return BOTTOM
    slope = b.beta[0] if null_slope == NULL_SLOPE_POOLED else b.beta1[0]
    null = ThetaMixtureNull(slope=float(slope), xbar=float(b.xbar[0]),
                            x2bar=float(b.x2bar[0]), s0_sq=float(b.s0_sq[0]),
                            n1=g.n1, n2=g.n2, n=g.n)
    alt = ThetaMixtureAlt(beta1=float(b.beta1[0]), beta2=float(b.beta2[0]),
                          x2bar1=float(b.x2bar1[0]), x2bar2=float(b.x2bar2[0]),
                          x2bar=float(b.x2bar[0]), s_sq=float(b.s_sq[0]),
                          n1=g.n1, n2=g.n2, n=g.n)
    return ThetaPair(null, alt)


def private_f_stat_mixture(theta1: ThetaMixtureAlt) -> float:
    """Mixture F formula evaluated on private statistics"""
    if theta1.s_sq <= 0:
        raise NonpositiveVariancePiece(f"private S^2 = {theta1.s_sq:.4g}")
    if theta1.x2bar <= 0:
        raise NonpositiveVariancePiece(f"private pooled x2bar = {theta1.x2bar:.4g}")
    return float(mixture_f_from_pieces(theta1.beta1, theta1.beta2, theta1.n1, theta1.n2,
                                       theta1.x2bar1, theta1.x2bar2, theta1.x2bar,
                                       theta1.s_sq))


if __name__ == "__main__":
    print("=" * 60)
    print("PRIVATE LINEAR STATISTICS")
    print("=" * 60)

    rng = RandomSource(seed=7)
    x = rng.normal(0.5, 1.0, 1000)
    d = Dataset(x, x + rng.normal(0.0, 0.35, 1000))
    for rho in (0.005, 0.125, 0.5, 2.0):
        pair = dp_stats_linear(d, PrivacyBudget(rho), ClipBound(2.0), rng)
        if pair.is_bottom:
            print(f"\nrho={rho}: Bottom")
            continue
        print(f"\nrho={rho}:")
        print(f"  slope~ = {pair.alt.beta1:.4f}")
        print(f"  T~     = {private_f_stat_linear(pair.alt):.2f}")
