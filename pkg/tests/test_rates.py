import math

import numpy as np
import pytest

from kernelbcd.errors import (
    CombinatorialBlowupError,
    ConfigError,
    InvalidRateError,
    NotPerfectSquareError,
    ThresholdNotMetError,
)
from kernelbcd.kernels import FeatureMapSpec, KernelSpec, gaussian_blobs
from kernelbcd.rates import (
    QuadraticProblem,
    SpectrumModel,
    adversarial_hessian,
    bcd_iterations_to_tolerance,
    bernstein_lower_rate,
    chernoff_violation_rate,
    classical_bound,
    conditioning_compare,
    improved_bound,
    l_eff,
    l_max_b,
    monte_carlo_slack,
    rf_concentration_check,
    rf_required_features,
    run_bcd_quadratic,
    standard_rate_iters,
    synthetic_spectrum_kernel,
    table1_regime,
    theorem_rate,
)


def random_spd(d, seed, shift=0.5):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((d, d))
    return raw @ raw.T / d + shift * np.eye(d)


class TestLEff:
    def test_identity_example(self):
        assert l_eff(np.eye(4), 2) == pytest.approx(
            math.e**2 + 2.0 * math.log(16.0), rel=1e-9
        )

    def test_full_block(self):
        for d in (3, 6, 10):
            assert l_eff(np.eye(d), d) == pytest.approx(
                math.e**2 + math.log(2.0 * d), rel=1e-9
            )

    def test_homogeneity(self):
        h = random_spd(8, 0)
        for c in (0.25, 3.0, 17.0):
            assert l_eff(c * h, 3) == pytest.approx(c * l_eff(h, 3), rel=1e-8)


class TestLMaxB:
    def test_diagonal(self):
        h = np.diag([4.0, 1.0, 3.0, 2.0])
        for b in (1, 2, 3, 4):
            est = l_max_b(h, b)
            assert est.exact
            assert est.value == pytest.approx(4.0)

    def test_block_diagonal_tight_case(self):
        # all-ones blocks of exactly the block size: the restricted
        # constant equals the global one
        h = adversarial_hessian(9, 0.5)
        est = l_max_b(h, 3)
        assert est.exact
        assert est.value == pytest.approx(3.5, rel=1e-12)
        top = np.linalg.eigvalsh(h)[-1]
        assert est.value == pytest.approx(top, rel=1e-12)

    def test_matches_enumeration_oracle(self):
        from itertools import combinations

        h = random_spd(8, 1)
        est = l_max_b(h, 3)
        # independent oracle: spectral norm of each PSD submatrix via svd
        best = max(
            np.linalg.norm(h[np.ix_(s, s)], 2) for s in combinations(range(8), 3)
        )
        assert est.value == pytest.approx(best, rel=1e-12)

    def test_sampled_is_lower_bound_and_flagged(self):
        h = random_spd(12, 2)
        exact = l_max_b(h, 4)
        sampled = l_max_b(h, 4, mode="sampled", trials=50, seed=3)
        assert not sampled.exact
        assert sampled.value <= exact.value + 1e-12

    def test_combinatorial_cap(self):
        with pytest.raises(CombinatorialBlowupError):
            l_max_b(np.eye(50), 10)

    def test_homogeneity(self):
        h = random_spd(7, 4)
        assert l_max_b(3.0 * h, 2).value == pytest.approx(
            3.0 * l_max_b(h, 2).value, rel=1e-12
        )


class TestIterationCounts:
    def test_identity_hessian(self):
        d, b, eps = 6, 2, 1e-3
        assert standard_rate_iters(np.eye(d), b, 1.0, eps) == pytest.approx(
            d / b * math.log(1.0 / eps)
        )

    def test_eps_inverse_e(self):
        # log term is exactly 1 at eps = 1/e
        assert standard_rate_iters(np.eye(4), 2, 1.0, 1.0 / math.e) == pytest.approx(
            2.0
        )

    def test_combinatorial_cap_propagates(self):
        with pytest.raises(CombinatorialBlowupError):
            standard_rate_iters(np.eye(50), 10, 1.0, 1e-3)

    def test_adversarial_example_rate_gap(self):
        # block-diagonal construction at d = 16, b = sqrt(d) = 4, lam = 0.1:
        # the classical count uses the worst submatrix (L_max_b = lam + 4,
        # verified by exact enumeration), while the improved analysis puts
        # the same problem at the sqrt(d)/lam order; the classical count
        # overshoots that by about sqrt(d)
        d, lam, eps = 16, 0.1, 1e-3
        h = adversarial_hessian(d, lam)
        b = 4
        est = l_max_b(h, b)
        assert est.exact and est.value == pytest.approx(lam + 4.0, rel=1e-12)
        classical_count = standard_rate_iters(h, b, lam, eps)
        assert classical_count == pytest.approx(
            d * (lam + 4.0) / (b * lam) * math.log(1.0 / eps), rel=1e-12
        )
        improved_order = math.sqrt(d) / lam * math.log(1.0 / eps)
        ratio = classical_count / improved_order
        assert ratio >= math.sqrt(d) / 2.0
        assert ratio == pytest.approx(4.1, rel=1e-12)


class TestBounds:
    def test_zero_iterations_returns_gap0(self):
        h = random_spd(6, 5)
        assert improved_bound(h, 2, 0.3, 7.5, 0)[0] == 7.5

    def test_geometric_decay(self):
        h = random_spd(6, 6)
        seq = improved_bound(h, 2, 0.3, 1.0, 10)
        ratios = seq[1:] / seq[:-1]
        assert np.allclose(ratios, ratios[0])

    def test_identity_example_value(self):
        seq = improved_bound(np.eye(4), 2, 1.0, 1.0, 1)
        expected = 1.0 - 1.0 / (2.0 * (math.e**2 + 2.0 * math.log(16.0)))
        assert seq[1] == pytest.approx(expected, rel=1e-9)
        assert seq[1] == pytest.approx(0.9613, abs=5e-5)

    def test_invalid_rate(self):
        with pytest.raises(InvalidRateError):
            theorem_rate(0.01 * np.eye(4), 2, m=1e9)


class TestRunBcdQuadratic:
    def test_full_block_is_newton(self):
        prob = QuadraticProblem(random_spd(10, 7), np.ones(10))
        gaps = run_bcd_quadratic(prob, 10, seeds=3, tau=2)
        assert gaps[0] > 0
        assert gaps[1] <= 1e-12 * gaps[0]

    def test_diagonal_hessian_coupon_collector(self):
        d, b = 32, 4
        rng = np.random.default_rng(8)
        prob = QuadraticProblem(np.diag(rng.uniform(0.5, 4.0, d)), rng.standard_normal(d))
        tau = int(10 * (d / b) * math.log(d))
        gaps = run_bcd_quadratic(prob, b, seeds=5, tau=tau)
        assert gaps[-1] <= 1e-8 * gaps[0]

    def test_mean_gap_below_improved_bound(self):
        for seed in (9, 10):
            h = random_spd(24, seed)
            g = np.random.default_rng(seed + 100).standard_normal(24)
            prob = QuadraticProblem(h, g)
            m = float(np.linalg.eigvalsh(h)[0])
            gaps = run_bcd_quadratic(prob, 4, seeds=40, tau=120, base_seed=seed)
            bound = improved_bound(h, 4, m, gaps[0], 120)
            assert np.all(gaps <= 1.05 * bound)

    def test_mean_gap_below_classical_bound(self):
        h = random_spd(12, 11)
        g = np.random.default_rng(12).standard_normal(12)
        prob = QuadraticProblem(h, g)
        m = float(np.linalg.eigvalsh(h)[0])
        gaps = run_bcd_quadratic(prob, 3, seeds=40, tau=120, base_seed=13)
        bound = classical_bound(h, 3, m, gaps[0], 120)
        assert np.all(gaps <= 1.05 * bound)

    def test_scaling_invariance_of_iterates(self):
        # argmin of each block solve is invariant under (H, g) -> (cH, cg),
        # so seeded gap sequences scale exactly by c
        h = random_spd(10, 14)
        g = np.random.default_rng(15).standard_normal(10)
        gaps1 = run_bcd_quadratic(QuadraticProblem(h, g), 2, 4, 30, base_seed=16)
        gaps3 = run_bcd_quadratic(
            QuadraticProblem(3.0 * h, 3.0 * g), 2, 4, 30, base_seed=16
        )
        assert np.allclose(gaps3, 3.0 * gaps1, rtol=1e-9)

    def test_iterations_to_tolerance(self):
        prob = QuadraticProblem(random_spd(16, 17), np.ones(16))
        counts = bcd_iterations_to_tolerance(
            prob, 4, 1e-6, seeds=3, max_iters=5000
        )
        assert np.all(counts < 5000)
        gaps = run_bcd_quadratic(prob, 4, seeds=1, tau=int(counts[0]), base_seed=0)
        assert gaps[-1] <= 1e-6 * gaps[0]


class TestAdversarialHessian:
    def test_small_spectrum(self):
        h = adversarial_hessian(4, 1.0)
        vals = np.linalg.eigvalsh(h)
        assert vals[-1] == pytest.approx(3.0)
        assert vals[0] == pytest.approx(1.0)
        assert np.sum(np.isclose(vals, 3.0)) == 2  # one per block

    def test_nine_dim(self):
        vals = np.linalg.eigvalsh(adversarial_hessian(9, 0.5))
        assert vals[-1] == pytest.approx(3.5)

    def test_not_perfect_square(self):
        with pytest.raises(NotPerfectSquareError):
            adversarial_hessian(5, 1.0)


class TestConcentration:
    def test_chernoff_identity_never_violates(self):
        rate = chernoff_violation_rate(np.eye(20), 5, 0.2, trials=200, seed=0)
        assert rate == 0.0

    def test_chernoff_gaussian_within_budget(self):
        rng = np.random.default_rng(18)
        a = rng.standard_normal((50, 100))
        rate = chernoff_violation_rate(a, 10, 0.1, trials=2000, seed=19)
        assert rate <= 0.1 + monte_carlo_slack(0.1, 2000)

    def test_chernoff_delta_one_trivial(self):
        rng = np.random.default_rng(20)
        a = rng.standard_normal((20, 30))
        rate = chernoff_violation_rate(a, 5, 1.0, trials=100, seed=21)
        assert rate <= 1.0

    def test_bernstein_identity_never_violates(self):
        rate = bernstein_lower_rate(np.eye(20), 5, 0.2, trials=200, seed=22)
        assert rate == 0.0

    def test_bernstein_gaussian_within_budget(self):
        rng = np.random.default_rng(23)
        a = rng.standard_normal((50, 100))
        rate = bernstein_lower_rate(a, 10, 0.1, trials=2000, seed=24)
        assert rate <= 0.1 + monte_carlo_slack(0.1, 2000)

    def test_bernstein_delta_one_trivial(self):
        rng = np.random.default_rng(25)
        a = rng.standard_normal((20, 30))
        assert bernstein_lower_rate(a, 5, 1.0, trials=100, seed=26) <= 1.0


class TestRfConcentration:
    def test_below_threshold_is_skipped_not_failed(self):
        data = gaussian_blobs(20, 2, 2, seed=27, center_scale=1.0, noise=0.6)
        spec = FeatureMapSpec(p=4, sigma=1.2, master_seed=28)
        with pytest.raises(ThresholdNotMetError):
            rf_concentration_check(spec, data.X, 0.5, 0.1, trials=10)

    def test_passes_at_mandated_p(self):
        data = gaussian_blobs(24, 2, 2, seed=29, center_scale=1.0, noise=0.6)
        alpha, delta = 0.5, 0.1
        p_req = rf_required_features(data.X, 1.2, alpha, delta)
        spec = FeatureMapSpec(p=p_req, sigma=1.2, master_seed=30)
        result = rf_concentration_check(spec, data.X, alpha, delta, trials=100)
        assert result.passed
        assert result.required_p == p_req

    def test_wide_interval_always_passes(self):
        data = gaussian_blobs(16, 2, 2, seed=31, center_scale=1.0, noise=0.6)
        alpha = 0.99
        p_req = rf_required_features(data.X, 1.2, alpha, 0.2)
        spec = FeatureMapSpec(p=p_req, sigma=1.2, master_seed=32)
        result = rf_concentration_check(spec, data.X, alpha, 0.2, trials=50)
        assert result.violation_rate == 0.0

    def test_delta_one_trivial(self):
        data = gaussian_blobs(16, 2, 2, seed=33, center_scale=1.0, noise=0.6)
        p_req = rf_required_features(data.X, 1.2, 0.5, 1.0)
        spec = FeatureMapSpec(p=p_req, sigma=1.2, master_seed=34)
        result = rf_concentration_check(spec, data.X, 0.5, 1.0, trials=20)
        assert result.violation_rate <= 1.0 and result.passed


class TestTable1:
    def test_exponential_full(self):
        model = SpectrumModel("exponential", 1.0, 1024)
        regime = table1_regime(model, "full")
        assert regime.lambda_minimax == pytest.approx(math.log(1024) / 1024)
        assert regime.iterations == 1024
        assert regime.block_size == pytest.approx(math.log(1024) ** 2)
        assert regime.asymptotic

    def test_polynomial_nystrom(self):
        model = SpectrumModel("polynomial", 1.0, 729)
        regime = table1_regime(model, "nystrom", gamma=0.5, p=32)
        assert regime.iterations == pytest.approx(32 * 729 ** (2.0 / 3.0) / 0.5)
        assert regime.lambda_minimax == pytest.approx(729 ** (-2.0 / 3.0))
        assert regime.block_size == pytest.approx(1.5 * math.log(729))

    def test_rf_matches_full_iteration_order(self):
        model = SpectrumModel("exponential", 0.5, 512)
        full = table1_regime(model, "full")
        rf = table1_regime(model, "rf")
        assert rf.iterations == full.iterations
        assert rf.block_size == pytest.approx(math.log(512))

    def test_nystrom_needs_gamma_and_p(self):
        model = SpectrumModel("exponential", 1.0, 64)
        with pytest.raises(ConfigError):
            table1_regime(model, "nystrom", gamma=None, p=8)
        with pytest.raises(ConfigError):
            table1_regime(model, "nystrom", gamma=0.5, p=None)


class TestSyntheticSpectrum:
    def test_exponential_eigenvalues(self):
        model = SpectrumModel("exponential", math.log(2.0), 8)
        k = synthetic_spectrum_kernel(model, seed=35)
        vals = np.sort(np.linalg.eigvalsh(k))[::-1]
        expected = 8.0 * 0.5 ** np.arange(1, 9)
        assert np.allclose(vals, expected, rtol=1e-8)

    def test_trace_identity(self):
        model = SpectrumModel("polynomial", 1.0, 12)
        k = synthetic_spectrum_kernel(model, seed=36)
        assert np.trace(k) == pytest.approx(model.eigenvalues().sum(), rel=1e-10)

    def test_seeded_and_symmetric(self):
        model = SpectrumModel("exponential", 0.7, 10)
        k1 = synthetic_spectrum_kernel(model, seed=37)
        k2 = synthetic_spectrum_kernel(model, seed=37)
        assert np.array_equal(k1, k2)
        assert np.array_equal(k1, k1.T)


class TestConditioning:
    def test_single_feature_is_trivial(self):
        data = gaussian_blobs(32, 2, 2, seed=38)
        fspec = FeatureMapSpec(p=1, sigma=1.5, master_seed=39)
        pair = conditioning_compare(
            data, KernelSpec("rbf", 1.5), fspec, 1, 1e-2, 1e-6
        )
        assert pair.nystrom == pytest.approx(1.0)
        assert pair.rf == pytest.approx(1.0)

    def test_nystrom_worse_conditioned_on_decaying_spectra(self):
        data = gaussian_blobs(96, 3, 4, seed=40, center_scale=2.0, noise=0.8)
        kspec = KernelSpec("rbf", 1.5)
        wins = 0
        for s in range(10):
            fspec = FeatureMapSpec(p=24, sigma=1.5, master_seed=500 + s)
            pair = conditioning_compare(
                data, kspec, fspec, 24, 1e-3, 1e-6, landmark_seed=s
            )
            wins += pair.nystrom >= pair.rf
        assert wins >= 8

    def test_gamma_tames_nystrom_conditioning(self):
        data = gaussian_blobs(64, 3, 2, seed=41, center_scale=2.0, noise=0.8)
        kspec = KernelSpec("rbf", 1.5)
        fspec = FeatureMapSpec(p=16, sigma=1.5, master_seed=42)
        conds = [
            conditioning_compare(
                data, kspec, fspec, 16, 1e-3, gamma, landmark_seed=43
            ).nystrom
            for gamma in (0.0, 1e-4, 1e-2, 1.0)
        ]
        assert all(a >= b - 1e-6 * abs(a) for a, b in zip(conds, conds[1:]))
