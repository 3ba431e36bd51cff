"""Tests for rejection-rate estimation, tester comparison and the convergence diagnostic."""

from dataclasses import dataclass

import numpy as np
import pytest

from data_io import GeneratorSpec, MixtureSpec, Normal, read_results_csv
from dp_primitives import ClipBound, PrivacyBudget, RandomSource
from errors import InsufficientSamples, InvalidConfig, InvalidSpec
from harness import (DEFAULT_RHO_GRID, GRID_EPSILONS, NONPRIVATE_TESTERS, PRIVATE_TESTERS,
                     NonPrivateLinearFTester, NonPrivateMixtureFTester, RejectionEstimate,
                     TrialSampler, compare_algorithms, convergence_diagnostic,
                     describe_tester, estimate_rejection_prob, make_tester, noncentrality,
                     rho_from_epsilon, write_report)
from linear_model import GroupedDataset
from monte_carlo import (CIBootstrapTester, Decision, LinearFTester, MCConfig, MixtureFTester,
                         Outcome, Reason, fail_to_reject)
from nonparametric import BernoulliTester, KruskalWallisTester, NonPrivateBernoulliTester


@dataclass
class FixedTester:
    reject: bool
    name: str = "fixed"

    def __call__(self, data, rng):
        if self.reject:
            return Decision(Outcome.REJECT, Reason.CRITICAL_EXCEEDED)
        return fail_to_reject(Reason.CRITICAL_NOT_EXCEEDED)


class TestEstimateRejectionProb:

    @pytest.mark.parametrize("reject, rate", [(True, 1.0), (False, 0.0)])
    def test_fixed_testers(self, reject, rate):
        est = estimate_rejection_prob(TrialSampler(GeneratorSpec(n=20)), FixedTester(reject),
                                      50, RandomSource(0))
        assert est.rate == rate
        assert est.stderr == 0
        assert est.trials == 50
        assert est.n == 20

    def test_needs_a_trial(self):
        with pytest.raises(InvalidConfig):
            estimate_rejection_prob(TrialSampler(GeneratorSpec()), FixedTester(True), 0,
                                    RandomSource(0))

    def test_rate_and_stderr(self):
        est = RejectionEstimate("t", None, 0.5, None, 0.05, None, trials=1000, rejects=50)
        assert est.rate == 0.05
        assert est.stderr == pytest.approx(np.sqrt(0.05 * 0.95 / 1000))
        assert est.as_row()["n"] is None

    def test_same_result_for_any_worker_count(self):
        sampler = TrialSampler(GeneratorSpec(slope=0.05, n=200))
        tester = BernoulliTester(PrivacyBudget(0.5))
        one = estimate_rejection_prob(sampler, tester, 40, RandomSource(12), jobs=1)
        two = estimate_rejection_prob(sampler, tester, 40, RandomSource(12), jobs=2)
        assert one.rejects == two.rejects

    @pytest.mark.parametrize("spec, tester", [
        (GeneratorSpec(slope=0.0, n=100), NonPrivateLinearFTester()),
        (GeneratorSpec(slope=0.7, n=100, mixture=MixtureSpec(slope2=0.7)),
         NonPrivateMixtureFTester()),
    ])
    def test_nonprivate_f_is_calibrated(self, spec, tester):
        trials = 2000
        est = estimate_rejection_prob(TrialSampler(spec), tester, trials, RandomSource(13))
        assert abs(est.rate - 0.05) <= 3 * np.sqrt(0.05 * 0.95 / trials)

    def test_sampler_follows_design(self):
        spec = GeneratorSpec(n=40, mixture=MixtureSpec(slope2=0.0, frac1=0.25))
        g = TrialSampler(spec)(RandomSource(1))
        assert isinstance(g, GroupedDataset) and g.n1 == 10


class TestCompareAlgorithms:

    def test_cross_product_sampler_major(self):
        samplers = [TrialSampler(GeneratorSpec(n=10)), TrialSampler(GeneratorSpec(n=20))]
        testers = [FixedTester(True, "a"), FixedTester(False, "b"), FixedTester(True, "c")]
        estimates = compare_algorithms(samplers, testers, 5, RandomSource(2))
        assert [(e.n, e.tester) for e in estimates] == [
            (10, "a"), (10, "b"), (10, "c"), (20, "a"), (20, "b"), (20, "c")]
        assert [e.rate for e in estimates] == [1, 0, 1, 1, 0, 1]

    def test_no_testers(self):
        assert compare_algorithms([TrialSampler(GeneratorSpec())], [], 5, RandomSource(0)) == []

    def test_report(self, tmp_path):
        est = RejectionEstimate("linear-f", GeneratorSpec(n=500), 0.5, 2.0, 0.05, 1000,
                                trials=2000, rejects=103)
        path = tmp_path / "report.csv"
        write_report([est], path)
        df = read_results_csv(path)
        assert df["tester"].tolist() == ["linear-f"]
        assert df["reject_rate"].iloc[0] == pytest.approx(0.0515)
        assert df["K"].iloc[0] == 1000


class TestTesterRegistry:

    @pytest.mark.parametrize("name, kind", [
        ("linear-f", LinearFTester), ("mixture-f", MixtureFTester),
        ("bernoulli", BernoulliTester), ("kw", KruskalWallisTester),
        ("ci", CIBootstrapTester), ("linear-f-np", NonPrivateLinearFTester),
        ("mixture-f-np", NonPrivateMixtureFTester), ("bernoulli-np", NonPrivateBernoulliTester),
    ])
    def test_names(self, name, kind):
        tester = make_tester(name, PrivacyBudget(0.5))
        assert isinstance(tester, kind)
        assert tester.name == name

    def test_all_names_registered(self):
        for name in PRIVATE_TESTERS + NONPRIVATE_TESTERS:
            make_tester(name, PrivacyBudget(1.0))

    def test_unknown(self):
        with pytest.raises(InvalidConfig):
            make_tester("t-test", PrivacyBudget(1.0))

    def test_private_needs_budget(self):
        with pytest.raises(InvalidConfig):
            make_tester("linear-f")
        assert make_tester("linear-f-np").alpha == 0.05

    def test_options_reach_tester(self):
        cfg = MCConfig(k=500, alpha=0.1)
        ci = make_tester("ci", PrivacyBudget(0.5), ClipBound(3.0), cfg, target_slope=1.5)
        assert (ci.delta.delta, ci.cfg, ci.target_slope) == (3.0, cfg, 1.5)
        mix = make_tester("mixture-f", PrivacyBudget(0.5), null_slope="group1",
                          literal_residual_term=True)
        assert mix.null_slope == "group1" and mix.literal_residual_term
        ci = make_tester("ci", PrivacyBudget(0.5), ci_sampler="normal")
        assert ci.slope_sampler == "normal"
        assert make_tester("ci", PrivacyBudget(0.5)).slope_sampler == "release"

    def test_describe(self):
        info = describe_tester(LinearFTester(PrivacyBudget(0.5), ClipBound(2.0), MCConfig(k=200)))
        assert info == {"tester": "linear-f", "rho": 0.5, "delta": 2.0, "alpha": 0.05, "k": 200}
        info = describe_tester(BernoulliTester(PrivacyBudget(0.125), alpha=0.1))
        assert (info["delta"], info["alpha"], info["k"]) == (None, 0.1, None)
        assert describe_tester(NonPrivateLinearFTester())["rho"] is None


class TestPrivacyGrid:

    def test_default_grid_from_epsilons(self):
        assert [rho_from_epsilon(e) for e in GRID_EPSILONS[:5]] == \
            pytest.approx(list(DEFAULT_RHO_GRID))

    def test_extended_grid_top(self):
        assert rho_from_epsilon(GRID_EPSILONS[-1]) == pytest.approx(10.125)


class TestConvergenceDiagnostic:
    SPEC = GeneratorSpec(Normal(0.5, 1.0), slope=0.0, sigma_e=1.0)

    def test_needs_enough_samples(self):
        with pytest.raises(InsufficientSamples):
            convergence_diagnostic(self.SPEC, 1000, PrivacyBudget(0.5), ClipBound(6.0), 50,
                                   RandomSource(0))

    def test_linear_design_only(self):
        spec = GeneratorSpec(mixture=MixtureSpec(slope2=0.0))
        with pytest.raises(InvalidSpec):
            convergence_diagnostic(spec, 1000, PrivacyBudget(0.5), ClipBound(6.0), 200,
                                   RandomSource(0))

    def test_noncentrality(self):
        assert noncentrality(GeneratorSpec(slope=0.0)) == 0
        spec = GeneratorSpec(Normal(0.5, 2.0), slope=0.5, sigma_e=0.5, n=100)
        assert noncentrality(spec) == pytest.approx(0.25 * 100 * 4 / 0.25)
        with pytest.raises(InvalidSpec):
            noncentrality(GeneratorSpec(slope=1.0, sigma_e=0.0))

    def test_nonprivate_statistic_is_chi_square(self):
        report = convergence_diagnostic(self.SPEC, 1000, PrivacyBudget(0.5), ClipBound(6.0),
                                        2000, RandomSource(14), private=False)
        assert report.rho is None and report.excluded == 0
        assert report.samples == 2000
        assert report.ks_distance < 0.05
        assert report.mean == pytest.approx(1.0, abs=0.15)

    def test_all_draws_excluded(self):
        flat = GeneratorSpec(Normal(0.5, 1.0), slope=0.0, sigma_e=0.0)
        with pytest.raises(InsufficientSamples, match="usable"):
            convergence_diagnostic(flat, 200, PrivacyBudget(0.5), ClipBound(6.0), 200,
                                   RandomSource(0), private=False)

    @pytest.mark.slow
    def test_nonprivate_statistic_at_full_scale(self):
        report = convergence_diagnostic(self.SPEC, 100_000, PrivacyBudget(0.5), ClipBound(6.0),
                                        2000, RandomSource(15), private=False)
        assert report.ks_distance <= 0.03

    @pytest.mark.slow
    def test_private_statistic_at_large_budget(self):
        report = convergence_diagnostic(self.SPEC, 100_000, PrivacyBudget(50.0), ClipBound(6.0),
                                        2000, RandomSource(16))
        assert report.excluded == 0
        assert report.ks_distance <= 0.05

    @pytest.mark.slow
    def test_private_statistic_is_inflated_by_release_noise(self):
        # at rho = 0.5 the released slope numerator carries noise with about
        # 0.26 of the sampling variance, so the statistic is near 1.26 chi2(1)
        report = convergence_diagnostic(self.SPEC, 100_000, PrivacyBudget(0.5), ClipBound(6.0),
                                        2000, RandomSource(16))
        assert report.mean == pytest.approx(1.26, abs=0.15)
        assert report.ks_distance > 0.03


def _significance_bound(trials: int) -> float:
    return 0.05 + 3 * np.sqrt(0.05 * 0.95 / trials)


@pytest.mark.slow
class TestFullScale:
    """Significance and power checks at the sizes the experiments run at"""

    @pytest.mark.parametrize("rho", [0.125, 0.5, 2.0])
    @pytest.mark.parametrize("n", [100, 500])
    @pytest.mark.parametrize("sigma_e", [0.35, 1.0])
    def test_linear_f_significance_grid(self, rho, n, sigma_e):
        spec = GeneratorSpec(Normal(0.5, 1.0), slope=0.0, sigma_e=sigma_e, n=n)
        tester = make_tester("linear-f", PrivacyBudget(rho), cfg=MCConfig(k=200))
        est = estimate_rejection_prob(TrialSampler(spec), tester, 2000, RandomSource(20), jobs=-1)
        assert est.rate <= _significance_bound(2000)

    @pytest.mark.parametrize("rho", [0.125, 0.5, 2.0])
    def test_mixture_f_significance(self, rho):
        spec = GeneratorSpec(Normal(0.5, 1.0), slope=0.7, n=500, mixture=MixtureSpec(slope2=0.7))
        tester = make_tester("mixture-f", PrivacyBudget(rho), cfg=MCConfig(k=200))
        est = estimate_rejection_prob(TrialSampler(spec), tester, 2000, RandomSource(21), jobs=-1)
        assert est.rate <= _significance_bound(2000)

    def test_power_grows_with_n(self):
        tester = make_tester("linear-f", PrivacyBudget(0.5), cfg=MCConfig(k=200))
        samplers = [TrialSampler(GeneratorSpec(Normal(0.5, 1.0), slope=1.0, n=n))
                    for n in (100, 500, 2000)]
        rates = [e.rate for e in compare_algorithms(samplers, [tester], 1000, RandomSource(22),
                                                    jobs=-1)]
        assert all(later >= earlier - 0.03 for earlier, later in zip(rates, rates[1:]))
        assert rates[-1] >= 0.9

    def test_large_budget_matches_nonprivate_power(self):
        # slope chosen so the non-private test has power near 0.9 at n = 2000
        sampler = TrialSampler(GeneratorSpec(Normal(0.5, 1.0), slope=0.0254, n=2000))
        private = make_tester("linear-f", PrivacyBudget(50.0), cfg=MCConfig(k=500))
        # same seed, so both testers see the same datasets
        dp = estimate_rejection_prob(sampler, private, 1000, RandomSource(23), jobs=-1)
        plain = estimate_rejection_prob(sampler, NonPrivateLinearFTester(), 1000,
                                        RandomSource(23), jobs=-1)
        assert 0.75 <= plain.rate <= 0.97
        assert abs(dp.rate - plain.rate) <= 0.03

    @pytest.mark.parametrize("rho, floor", [(0.125, 1.0), (0.005, 0.8)])
    def test_strong_relationship_at_bike_scale(self, rho, floor):
        sampler = TrialSampler(GeneratorSpec(Normal(0.5, 1.0), slope=0.3, sigma_e=1.0,
                                             n=17_000))
        tester = make_tester("linear-f", PrivacyBudget(rho), cfg=MCConfig(k=200))
        est = estimate_rejection_prob(sampler, tester, 100, RandomSource(24), jobs=-1)
        assert est.rate >= floor

    def test_kw_keeps_up_with_mixture_f_on_small_data(self):
        spec = GeneratorSpec(Normal(0.5, 1.0), slope=1.0, sigma_e=1.0, n=200,
                             mixture=MixtureSpec(slope2=-1.0, frac1=0.5))
        budget = PrivacyBudget(0.5)
        kw, f = compare_algorithms([TrialSampler(spec)],
                                   [make_tester("kw", budget), make_tester("mixture-f", budget)],
                                   2000, RandomSource(25), jobs=-1)
        assert kw.rate >= f.rate - 0.05
