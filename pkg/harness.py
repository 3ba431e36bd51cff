"""
Experiment Harness
Estimate significance and power of testers by repeated simulation, compare
testers across designs, and check the private F statistic's limiting law

Every trial gets its own RandomSource substream, so results do not depend on
the number of workers.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from data_io import GeneratorSpec, generate, generate_batch, write_results_csv
from dp_primitives import ClipBound, PrivacyBudget, RandomSource
from errors import InsufficientSamples, InvalidConfig, InvalidSpec
from linear_model import (R, Dataset, GroupedDataset, f_stat_linear, f_stat_mixture,
                          linear_betas, linear_f_from_pieces, linear_rss,
                          mixture_suff_stats, ols_linear, ols_mixture, suff_stats)
from monte_carlo import (CI_SAMPLER_RELEASE, CIBootstrapTester, Decision, LinearFTester,
                         MCConfig, MixtureFTester, Outcome, Reason, batch_sizes, fail_to_reject)
from nonparametric import (BernoulliTester, KruskalWallisTester,
                           NonPrivateBernoulliTester)
from suffstat_testers import (NULL_SLOPE_POOLED, dp_stats_linear_batch,
                              linear_batch_statistics)

logger = logging.getLogger(__name__)

MIN_DIAGNOSTIC_SAMPLES = 100

# Extended rho grid is eps^2 / 2 over these eps; the first five give DEFAULT_RHO_GRID
GRID_EPSILONS = (0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5)
DEFAULT_RHO_GRID = (0.005, 0.125, 0.5, 1.125, 2.0)


def rho_from_epsilon(eps: float) -> float:
    """rho = eps^2 / 2"""
    return eps ** 2 / 2


# ---------------------------------------------------------------------------
# Non-private reference testers
# ---------------------------------------------------------------------------

def _f_decision(f: float, n: int, alpha: float) -> Decision:
    critical = float(stats.f.ppf(1 - alpha, 1, n - R))
    p_value = float(stats.f.sf(f, 1, n - R))
    if f > critical:
        return Decision(Outcome.REJECT, Reason.CRITICAL_EXCEEDED, f, critical, p_value)
    return fail_to_reject(Reason.CRITICAL_NOT_EXCEEDED, statistic=f, threshold=critical,
                          p_value=p_value)


@dataclass
class NonPrivateLinearFTester:
    """Classical F test for a linear relationship against F(1, n-2)"""
    alpha: float = 0.05
    name: str = "linear-f-np"

    def __call__(self, d: Dataset, rng: RandomSource) -> Decision:
        s = suff_stats(d)
        return _f_decision(f_stat_linear(ols_linear(s), s), d.n, self.alpha)


@dataclass
class NonPrivateMixtureFTester:
    """Classical F test for equal slopes of two lines through the origin"""
    alpha: float = 0.05
    name: str = "mixture-f-np"

    def __call__(self, g: GroupedDataset, rng: RandomSource) -> Decision:
        fit = ols_mixture(g)
        return _f_decision(f_stat_mixture(fit, mixture_suff_stats(g)), g.n, self.alpha)


# ---------------------------------------------------------------------------
# Tester registry
# ---------------------------------------------------------------------------

PRIVATE_TESTERS = ("linear-f", "mixture-f", "bernoulli", "kw", "ci")
NONPRIVATE_TESTERS = ("linear-f-np", "mixture-f-np", "bernoulli-np")
MIXTURE_TESTERS = frozenset({"mixture-f", "mixture-f-np", "kw"})


def make_tester(name: str, budget: Optional[PrivacyBudget] = None,
                delta: ClipBound = ClipBound(2.0), cfg: MCConfig = MCConfig(),
                target_slope: float = 0.0, null_slope: str = NULL_SLOPE_POOLED,
                literal_residual_term: bool = False,
                ci_sampler: str = CI_SAMPLER_RELEASE):
    """Build a tester by its command-line name; private testers need a budget"""
    if name == "linear-f-np":
        return NonPrivateLinearFTester(cfg.alpha)
    if name == "mixture-f-np":
        return NonPrivateMixtureFTester(cfg.alpha)
    if name == "bernoulli-np":
        return NonPrivateBernoulliTester(cfg.alpha)
    if name not in PRIVATE_TESTERS:
        raise InvalidConfig(f"unknown tester {name!r}; choose from "
                            f"{', '.join(PRIVATE_TESTERS + NONPRIVATE_TESTERS)}")
    if budget is None:
        raise InvalidConfig(f"tester {name!r} needs a privacy budget")
    if name == "linear-f":
        return LinearFTester(budget, delta, cfg, literal_residual_term)
    if name == "mixture-f":
        return MixtureFTester(budget, delta, cfg, null_slope, literal_residual_term)
    if name == "bernoulli":
        return BernoulliTester(budget, cfg.alpha)
    if name == "kw":
        return KruskalWallisTester(budget, cfg)
    return CIBootstrapTester(budget, delta, cfg, target_slope, ci_sampler)


# ---------------------------------------------------------------------------
# Rejection-rate estimation
# ---------------------------------------------------------------------------

@dataclass
class TrialSampler:
    """Draws a fresh dataset from a generator spec on every call"""
    spec: GeneratorSpec

    def __call__(self, rng: RandomSource):
        return generate(self.spec, rng)


@dataclass
class RejectionEstimate:
    tester: str
    spec: Optional[GeneratorSpec]
    rho: Optional[float]
    delta: Optional[float]
    alpha: Optional[float]
    k: Optional[int]
    trials: int
    rejects: int

    @property
    def rate(self) -> float:
        return self.rejects / self.trials

    @property
    def stderr(self) -> float:
        return math.sqrt(self.rate * (1 - self.rate) / self.trials)

    @property
    def n(self) -> Optional[int]:
        return None if self.spec is None else self.spec.n

    def as_row(self) -> dict:
        return {"tester": self.tester, "n": self.n, "rho": self.rho,
                "delta": self.delta, "alpha": self.alpha, "K": self.k,
                "trials": self.trials, "reject_rate": self.rate,
                "stderr": self.stderr}


def describe_tester(tester) -> dict:
    """Pull name, rho, delta, alpha and K off a tester, where it has them"""
    budget = getattr(tester, "budget", None)
    delta = getattr(tester, "delta", None)
    cfg = getattr(tester, "cfg", None)
    alpha = cfg.alpha if cfg is not None else getattr(tester, "alpha", None)
    return {"tester": getattr(tester, "name", type(tester).__name__),
            "rho": None if budget is None else budget.rho,
            "delta": None if delta is None else delta.delta,
            "alpha": alpha,
            "k": None if cfg is None else cfg.k}


def _run_trial(sampler: Callable, tester: Callable, rng: RandomSource) -> bool:
    return tester(sampler(rng), rng).rejected


def estimate_rejection_prob(sampler: Callable, tester: Callable, trials: int,
                            rng: RandomSource, jobs: int = 1) -> RejectionEstimate:
    """
    Fraction of trials in which tester rejects on a fresh dataset from sampler

    Args:
        sampler: rng -> dataset
        tester: (dataset, rng) -> Decision
        trials: Number of independent trials M
        rng: Parent source; trial i runs on its i-th spawned child
        jobs: joblib worker count (-1 for all cores)
    """
    if trials < 1:
        raise InvalidConfig(f"trials must be at least 1, got {trials}")
    streams = rng.spawn(trials)
    outcomes = Parallel(n_jobs=jobs)(delayed(_run_trial)(sampler, tester, s)
                                     for s in streams)
    info = describe_tester(tester)
    estimate = RejectionEstimate(spec=getattr(sampler, "spec", None), trials=trials,
                                 rejects=int(sum(outcomes)), **info)
    logger.info("%s: %d/%d rejections (rate %.4f +/- %.4f)", info["tester"],
                estimate.rejects, trials, estimate.rate, estimate.stderr)
    return estimate


def compare_algorithms(samplers: Sequence[Callable], testers: Sequence[Callable],
                       trials: int, rng: RandomSource,
                       jobs: int = 1) -> List[RejectionEstimate]:
    """Every (sampler, tester) cell, sampler-major, each on its own substream"""
    cells = [(s, t) for s in samplers for t in testers]
    streams = rng.spawn(len(cells))
    return [estimate_rejection_prob(s, t, trials, child, jobs)
            for (s, t), child in zip(cells, streams)]


def write_report(estimates: Sequence[RejectionEstimate], path) -> None:
    write_results_csv(estimates, path)


# ---------------------------------------------------------------------------
# Limiting-distribution diagnostic
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    n: int
    rho: Optional[float]     # None for the non-private statistic
    delta: Optional[float]
    samples: int             # statistics actually compared
    excluded: int            # Bottom or degenerate draws left out
    noncentrality: float     # eta^2 of the reference chi-square
    ks_distance: float
    ks_pvalue: float
    mean: float
    variance: float


def noncentrality(spec: GeneratorSpec) -> float:
    """eta^2 = beta1^2 n var(x) / sigma_e^2 from the true generator parameters"""
    if spec.slope == 0:
        return 0.0
    if spec.sigma_e == 0:
        raise InvalidSpec("noncentrality is infinite when sigma_e = 0")
    return spec.slope ** 2 * spec.n * spec.x_dist.variance / spec.sigma_e ** 2


def _nonprivate_statistics(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    xbar, ybar = x.mean(axis=-1), y.mean(axis=-1)
    x2bar, xybar, y2bar = (x * x).mean(axis=-1), (x * y).mean(axis=-1), (y * y).mean(axis=-1)
    beta1, beta2 = linear_betas(xbar, ybar, x2bar, xybar)
    s2 = linear_rss(n, xbar, ybar, x2bar, xybar, y2bar, beta1, beta2) / (n - R)
    out = np.full(xbar.shape, -np.inf)
    ok = s2 > 0
    out[ok] = linear_f_from_pieces(beta1[ok], x2bar[ok] - xbar[ok] ** 2, s2[ok], n)
    return out


def convergence_diagnostic(spec: GeneratorSpec, n: int, budget: PrivacyBudget,
                           delta: ClipBound, samples: int, rng: RandomSource,
                           private: bool = True) -> ConvergenceReport:
    """
    KS distance between sampled linear F statistics and chi-square(1, eta^2)

    Each sample is a fresh dataset from spec (at size n) with fresh privacy noise.
    Delta should be large enough that clipping is rare, otherwise the private
    statistic is biased and the distance does not shrink with n.
    """
    if samples < MIN_DIAGNOSTIC_SAMPLES:
        raise InsufficientSamples(f"need at least {MIN_DIAGNOSTIC_SAMPLES} samples, got {samples}")
    if spec.mixture is not None:
        raise InvalidSpec("the diagnostic covers the linear design only")
    spec = spec.with_n(n)

    draws = []
    for size in batch_sizes(samples, n):
        x, y = generate_batch(spec, size, rng)
        if private:
            batch = dp_stats_linear_batch(x, y, budget, delta, rng)
            draws.append(linear_batch_statistics(batch))
        else:
            draws.append(_nonprivate_statistics(x, y))
    draws = np.concatenate(draws)
    usable = draws[np.isfinite(draws)]
    excluded = samples - usable.size
    if excluded:
        logger.info("%d of %d draws were Bottom or degenerate", excluded, samples)
    if usable.size < MIN_DIAGNOSTIC_SAMPLES:
        raise InsufficientSamples(f"only {usable.size} of {samples} draws were usable, "
                                  f"need {MIN_DIAGNOSTIC_SAMPLES}")

    eta2 = noncentrality(spec)
    reference = stats.chi2(1) if eta2 == 0 else stats.ncx2(1, eta2)
    ks = stats.kstest(usable, reference.cdf)
    return ConvergenceReport(n=n, rho=budget.rho if private else None,
                             delta=delta.delta if private else None,
                             samples=int(usable.size), excluded=int(excluded),
                             noncentrality=eta2, ks_distance=float(ks.statistic),
                             ks_pvalue=float(ks.pvalue), mean=float(np.mean(usable)),
                             variance=float(np.var(usable)))


if __name__ == "__main__":
    from data_io import Normal

    print("=" * 60)
    print("SIGNIFICANCE AND POWER")
    print("=" * 60)

    rng = RandomSource(seed=2024)
    for slope in (0.0, 1.0):
        sampler = TrialSampler(GeneratorSpec(Normal(0.5, 1.0), slope=slope, n=500))
        for tester in (NonPrivateLinearFTester(),
                       LinearFTester(PrivacyBudget(0.5), cfg=MCConfig(k=200))):
            est = estimate_rejection_prob(sampler, tester, 200, rng)
            print(f"slope={slope} {est.tester:>12}: {est.rate:.3f} +/- {est.stderr:.3f}")

    report = convergence_diagnostic(GeneratorSpec(Normal(0.5, 1.0), slope=0.0, sigma_e=1.0),
                                    10_000, PrivacyBudget(0.5), ClipBound(6.0), 500, rng)
    print(f"\nKS distance to chi2(1) at n=10^4: {report.ks_distance:.3f}")
