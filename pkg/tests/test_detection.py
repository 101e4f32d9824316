import math

import numpy as np
import pytest

from prefield.detection import (
    BackgroundTooSmallError,
    BipartiteEnsemble,
    ThresholdDetector,
    TrialBatch,
    calibrate_threshold,
    click_statistics,
    correlation_from_clicks,
    pbs_projectors,
    quadratic_correlation,
    quadratic_correlation_mc,
    quadratic_correlation_renormalized,
    run_single_party_trials,
    run_trials,
)
from prefield.hilbert import (
    FieldVector,
    HermitianOperator,
    kron_vector,
    partial_trace,
    projector_from_state,
    state_average,
    tensor_product,
)
from prefield.observables import QuadraticForm
from prefield.random_field import (
    BackgroundField,
    RandomSeed,
    empirical_covariance,
    ensemble_from_pure_state,
)

SEED = RandomSeed(777)

SINGLET = FieldVector(np.array([0.0, 1.0, -1.0, 0.0]) / np.sqrt(2.0))
SINGLET_EPS_MIN = math.sqrt(0.5) - 0.5


def rand_unit(rng, dim):
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return FieldVector(v / np.linalg.norm(v))


def rand_hermitian(rng, dim):
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return HermitianOperator((m + m.conj().T) / 2)


def polarization(theta):
    plus, minus = pbs_projectors(theta)
    return HermitianOperator(plus.matrix - minus.matrix)


class TestPBSProjectors:
    def test_axis_aligned(self):
        plus, minus = pbs_projectors(0.0)
        np.testing.assert_allclose(plus.matrix, np.diag([1.0, 0.0]), atol=1e-15)
        np.testing.assert_allclose(minus.matrix, np.diag([0.0, 1.0]), atol=1e-15)

    def test_diagonal_angle(self):
        plus, minus = pbs_projectors(np.pi / 4)
        np.testing.assert_allclose(plus.matrix, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
        np.testing.assert_allclose(minus.matrix, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)

    def test_quarter_turn_swaps(self):
        plus, minus = pbs_projectors(np.pi / 2)
        np.testing.assert_allclose(plus.matrix, np.diag([0.0, 1.0]), atol=1e-15)
        np.testing.assert_allclose(minus.matrix, np.diag([1.0, 0.0]), atol=1e-15)

    def test_completeness_any_angle(self):
        for theta in np.linspace(0, np.pi, 7):
            plus, minus = pbs_projectors(theta)
            np.testing.assert_allclose(plus.matrix + minus.matrix, np.eye(2), atol=1e-14)
            assert np.abs(plus.matrix @ minus.matrix).max() <= 1e-14


class TestThresholdDetector:
    def test_rejects_incomplete_channels(self):
        p, _ = pbs_projectors(0.0)
        with pytest.raises(ValueError, match="identity"):
            ThresholdDetector(0.1, (p,))

    def test_rejects_overlapping_channels(self):
        p, _ = pbs_projectors(0.0)
        q, _ = pbs_projectors(0.3)
        with pytest.raises(ValueError):
            ThresholdDetector(0.1, (p, q))

    def test_rejects_negative_threshold(self):
        with pytest.raises(ValueError):
            ThresholdDetector(-0.1, pbs_projectors(0.0))

    def test_channel_powers_sum_to_total(self):
        rng = np.random.default_rng(0)
        det = ThresholdDetector(0.1, pbs_projectors(0.7))
        x = rng.standard_normal((50, 2)) + 1j * rng.standard_normal((50, 2))
        powers = det.channel_powers(x)
        np.testing.assert_allclose(powers.sum(axis=1), (np.abs(x) ** 2).sum(axis=1), atol=1e-12)


class TestBipartiteConstruction:
    def test_non_square_dimension_rejected(self):
        with pytest.raises(ValueError, match="square"):
            BipartiteEnsemble(FieldVector(np.ones(6) / np.sqrt(6)), BackgroundField(1.0))

    def test_unnormalized_state_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            BipartiteEnsemble(FieldVector([1.0, 0.0, 0.0, 1.0]), BackgroundField(1.0))

    def test_singlet_epsilon_floor(self):
        ens = BipartiteEnsemble(SINGLET, BackgroundField(0.3))
        assert ens.epsilon_min == pytest.approx(SINGLET_EPS_MIN, abs=1e-12)

    def test_sub_floor_epsilon_rejected_with_value(self):
        with pytest.raises(BackgroundTooSmallError) as err:
            BipartiteEnsemble(SINGLET, BackgroundField(0.1))
        assert err.value.epsilon_min == pytest.approx(SINGLET_EPS_MIN, abs=1e-12)

    def test_product_state_needs_no_background(self):
        rng = np.random.default_rng(1)
        psi = FieldVector(kron_vector(rand_unit(rng, 2), rand_unit(rng, 2)).components)
        ens = BipartiteEnsemble(psi, BackgroundField(0.0))
        assert ens.epsilon_min == pytest.approx(0.0, abs=1e-12)
        assert np.linalg.matrix_rank(ens.cross_block, tol=1e-10) == 1

    def test_singlet_marginals_maximally_mixed(self):
        eps = 0.25
        ens = BipartiteEnsemble(SINGLET, BackgroundField(eps))
        expected = np.eye(2) / 2 + eps * np.eye(2)
        np.testing.assert_allclose(ens.marginal_covariance_1.matrix, expected, atol=1e-12)
        np.testing.assert_allclose(ens.marginal_covariance_2.matrix, expected, atol=1e-12)

    def test_marginals_match_partial_trace(self):
        rng = np.random.default_rng(2)
        psi = rand_unit(rng, 9)
        ens = BipartiteEnsemble(psi, BackgroundField(1.0))
        proj = projector_from_state(psi)
        for keep, marginal in ((1, ens.marginal_covariance_1), (2, ens.marginal_covariance_2)):
            rho = partial_trace(proj, (3, 3), keep).matrix
            np.testing.assert_allclose(marginal.matrix, rho + np.eye(3), atol=1e-12)

    def test_sampled_marginals_match(self):
        ens = BipartiteEnsemble(SINGLET, BackgroundField(0.25))
        phi1, phi2 = ens.sample_pairs(60_000, SEED)
        for phi, marginal in ((phi1, ens.marginal_covariance_1), (phi2, ens.marginal_covariance_2)):
            emp = empirical_covariance(phi).matrix
            assert np.abs(emp - marginal.matrix).max() <= 5.0 * 0.75 / np.sqrt(60_000)

    def test_pair_sampling_partition_invariant(self):
        ens = BipartiteEnsemble(SINGLET, BackgroundField(0.25))
        full = ens.sample_pairs(5_000, SEED)
        parts = [ens.sample_pairs(2_500, SEED, start_index=k * 2_500) for k in range(2)]
        np.testing.assert_array_equal(full[0], np.concatenate([p[0] for p in parts]))
        np.testing.assert_array_equal(full[1], np.concatenate([p[1] for p in parts]))


class TestQuadraticCorrelation:
    def test_product_state_factorizes(self):
        rng = np.random.default_rng(3)
        psi1, psi2 = rand_unit(rng, 2), rand_unit(rng, 2)
        psi = FieldVector(kron_vector(psi1, psi2).components)
        ens = BipartiteEnsemble(psi, BackgroundField(0.0))
        a, b = rand_hermitian(rng, 2), rand_hermitian(rng, 2)
        corr = quadratic_correlation_renormalized(ens, a, b)
        product = state_average(a, psi1) * state_average(b, psi2)
        assert corr == pytest.approx(product, abs=1e-12)

    def test_singlet_anticorrelated(self):
        ens = BipartiteEnsemble(SINGLET, BackgroundField(0.3))
        sz = HermitianOperator.diagonal([1.0, -1.0])
        assert quadratic_correlation_renormalized(ens, sz, sz) == pytest.approx(-1.0, abs=1e-12)

    def test_singlet_cosine_curve(self):
        ens = BipartiteEnsemble(SINGLET, BackgroundField(0.5))
        for t1, t2 in [(0.0, 0.0), (0.1, 0.7), (np.pi / 8, 3 * np.pi / 8), (1.0, 2.2)]:
            corr = quadratic_correlation_renormalized(ens, polarization(t1), polarization(t2))
            assert corr == pytest.approx(-np.cos(2 * (t1 - t2)), abs=1e-12)

    def test_renormalized_equals_tensor_oracle_100_random(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(2, 4))
            psi = rand_unit(rng, n * n)
            eps_floor = BipartiteEnsemble(psi, BackgroundField(1.0)).epsilon_min
            eps = eps_floor + float(rng.uniform(0.0, 0.5))
            ens = BipartiteEnsemble(psi, BackgroundField(eps))
            a, b = rand_hermitian(rng, n), rand_hermitian(rng, n)
            oracle = state_average(tensor_product(a, b), psi)
            assert quadratic_correlation_renormalized(ens, a, b) == pytest.approx(
                oracle, abs=1e-10
            )

    def test_raw_correlation_wick_vs_mc_100_cases(self):
        # independent check of the moment factorization: Monte Carlo against
        # Tr(D1 A)Tr(D2 B) + Tr(A Q B^T Q^+)
        rng = np.random.default_rng(5)
        n_mc = 20_000
        for trial in range(100):
            n = int(rng.integers(2, 4))
            psi = rand_unit(rng, n * n)
            eps = BipartiteEnsemble(psi, BackgroundField(1.0)).epsilon_min + float(
                rng.uniform(0.05, 0.4)
            )
            ens = BipartiteEnsemble(psi, BackgroundField(eps))
            a, b = rand_hermitian(rng, n), rand_hermitian(rng, n)
            exact = quadratic_correlation(ens, a, b)
            est = quadratic_correlation_mc(
                ens, a, b, n_mc, RandomSeed(1000 + trial), renormalized=False
            )
            assert abs(est.mean - exact) <= 5.0 * est.standard_error

    def test_renormalized_mc_matches_exact(self):
        ens = BipartiteEnsemble(SINGLET, BackgroundField(0.3))
        sz = HermitianOperator.diagonal([1.0, -1.0])
        est = quadratic_correlation_mc(ens, sz, sz, 50_000, SEED, renormalized=True)
        assert abs(est.mean - (-1.0)) <= 5.0 * est.standard_error

    def test_independent_fields_have_zero_covariance_term(self):
        # C = 0: a product of independent marginals; build via a product
        # state, whose cross block has rank 1, then null the coupling by
        # comparing against two independent single-party ensembles
        rng = np.random.default_rng(6)
        psi1, psi2 = rand_unit(rng, 2), rand_unit(rng, 2)
        a, b = rand_hermitian(rng, 2), rand_hermitian(rng, 2)
        e1 = ensemble_from_pure_state(psi1, BackgroundField(0.1))
        e2 = ensemble_from_pure_state(psi2, BackgroundField(0.1))
        fa = QuadraticForm(a).evaluate_batch(e1.sample(40_000, RandomSeed(61)))
        fb = QuadraticForm(b).evaluate_batch(e2.sample(40_000, RandomSeed(62)))
        cov = float(np.mean(fa * fb) - fa.mean() * fb.mean())
        se = float((fa * fb).std(ddof=1) / np.sqrt(40_000))
        assert abs(cov) <= 5.0 * se

    def test_dimension_mismatch(self):
        ens = BipartiteEnsemble(SINGLET, BackgroundField(0.3))
        with pytest.raises(ValueError):
            quadratic_correlation_renormalized(ens, rand_hermitian(np.random.default_rng(7), 3), polarization(0.0))


class TestTrials:
    def test_zero_threshold_everything_clicks(self):
        ens = BipartiteEnsemble(SINGLET, BackgroundField(0.3))
        det = ThresholdDetector(0.0, pbs_projectors(0.0))
        batch = run_trials(ens, 0.0, 0.3, det, 5_000, SEED)
        stats = click_statistics(batch)
        assert stats.double_rate_1 >= 0.999
        assert stats.double_rate_2 >= 0.999

    def test_huge_threshold_no_clicks(self):
        ens = BipartiteEnsemble(SINGLET, BackgroundField(0.3))
        det = ThresholdDetector(1e6, pbs_projectors(0.0))
        batch = run_trials(ens, 0.0, 0.3, det, 2_000, SEED)
        stats = click_statistics(batch)
        assert stats.none_rate_1 == 1.0
        assert stats.degenerate

    def test_double_click_rate_monotone_in_threshold(self):
        ens = BipartiteEnsemble(SINGLET, BackgroundField(SINGLET_EPS_MIN))
        n = 100_000
        phi1, _ = ens.sample_pairs(n, SEED)
        det0 = ThresholdDetector(0.0, pbs_projectors(0.0))
        powers = det0.channel_powers(phi1)
        previous = None
        for d in np.geomspace(0.01, 2.0, 12):
            rate = float(((powers > d).sum(axis=1) == 2).mean())
            se = math.sqrt(max(rate * (1 - rate), 1e-12) / n)
            if previous is not None:
                assert rate <= previous + 5.0 * se
            previous = rate

    def test_acceptance_fraction_monotone_past_peak(self):
        # the accepted-coincidence fraction vanishes at both threshold
        # extremes (all doubles / no clicks) and peaks near d ~ 0.5 for the
        # singlet at its minimal background; monotone decrease holds on the
        # tail, which is where the operating points live
        ens = BipartiteEnsemble(SINGLET, BackgroundField(SINGLET_EPS_MIN))
        n = 100_000
        phi1, phi2 = ens.sample_pairs(n, SEED)
        det0 = ThresholdDetector(0.0, pbs_projectors(0.0))
        p1, p2 = det0.channel_powers(phi1), det0.channel_powers(phi2)
        previous = None
        for d in np.geomspace(0.5, 4.0, 10):
            accepted = ((p1 > d).sum(axis=1) == 1) & ((p2 > d).sum(axis=1) == 1)
            frac = float(accepted.mean())
            se = math.sqrt(max(frac * (1 - frac), 1e-12) / n)
            if previous is not None:
                assert frac <= previous + 5.0 * se * math.sqrt(2.0)
            previous = frac

    def test_perfect_anticorrelation_at_aligned_settings(self):
        # at the minimal background the paired fields are exact conjugates
        # with swapped channels, so aligned settings anti-correlate exactly
        ens = BipartiteEnsemble(SINGLET, BackgroundField(SINGLET_EPS_MIN))
        det = ThresholdDetector(0.2, pbs_projectors(0.0))
        batch = run_trials(ens, 0.4, 0.4, det, 20_000, SEED)
        e, _ = correlation_from_clicks(batch)
        assert e == pytest.approx(-1.0, abs=1e-12)

    def test_trial_partition_invariance(self):
        ens = BipartiteEnsemble(SINGLET, BackgroundField(0.25))
        det = ThresholdDetector(0.1, pbs_projectors(0.0))
        full = run_trials(ens, 0.0, 0.5, det, 8_000, SEED)
        parts = [
            run_trials(ens, 0.0, 0.5, det, 4_000, SEED, start_index=k * 4_000) for k in range(2)
        ]
        np.testing.assert_array_equal(
            full.clicks1, np.concatenate([p.clicks1 for p in parts], axis=0)
        )
        np.testing.assert_array_equal(
            full.clicks2, np.concatenate([p.clicks2 for p in parts], axis=0)
        )


class TestClickStatistics:
    def test_all_none_flagged_degenerate(self):
        batch = TrialBatch(0.0, 0.1, np.zeros((10, 2), bool), np.zeros((10, 2), bool))
        stats = click_statistics(batch)
        assert stats.degenerate
        assert stats.n_accepted == 0

    def test_synthetic_counts(self):
        clicks1 = np.array([[1, 0], [1, 0], [0, 1], [1, 1]], bool)
        clicks2 = np.array([[0, 1], [1, 0], [0, 1], [0, 0]], bool)
        batch = TrialBatch(0.0, 0.2, clicks1, clicks2)
        stats = click_statistics(batch)
        assert stats.n_accepted == 3
        assert stats.double_rate_1 == pytest.approx(0.25)
        assert stats.none_rate_2 == pytest.approx(0.25)
        assert stats.coincidences == {(1, 1): 1, (1, -1): 1, (-1, 1): 0, (-1, -1): 1}

    def test_correlation_from_synthetic_batches(self):
        all_pp = TrialBatch(0.0, 0.0, np.tile([True, False], (8, 1)), np.tile([True, False], (8, 1)))
        assert correlation_from_clicks(all_pp)[0] == pytest.approx(1.0)
        balanced = TrialBatch(
            0.0,
            0.0,
            np.tile([True, False], (8, 1)),
            np.array([[True, False], [False, True]] * 4, bool),
        )
        assert correlation_from_clicks(balanced)[0] == pytest.approx(0.0)

    def test_no_accepted_coincidences_raises(self):
        batch = TrialBatch(0.0, 0.0, np.ones((5, 2), bool), np.ones((5, 2), bool))
        with pytest.raises(ValueError, match="accepted"):
            correlation_from_clicks(batch)

    def test_keep_all_policy_accepts_everything(self):
        batch = TrialBatch(
            0.0, 0.0, np.ones((5, 2), bool), np.ones((5, 2), bool), policy="keep-all"
        )
        assert batch.accepted.all()


class TestSingleParty:
    def test_born_frequencies_at_calibration_point(self):
        # quick statistical check at the frozen operating point; the full
        # million-trial version lives in the acceptance suite
        from prefield.experiments import BORN_CLICK_EPSILON, BORN_SINGLE_FRACTION_TARGET

        cal = calibrate_threshold(BORN_CLICK_EPSILON, BORN_SINGLE_FRACTION_TARGET, SEED)
        assert cal.balanced
        det = ThresholdDetector(cal.threshold, pbs_projectors(0.0))
        for alpha in (np.pi / 6, np.pi / 3):
            psi = FieldVector([np.cos(alpha), np.sin(alpha)])
            ens = ensemble_from_pure_state(psi, BackgroundField(BORN_CLICK_EPSILON))
            batch = run_single_party_trials(ens, det, 400_000, SEED)
            stats = click_statistics(batch)
            f_plus = stats.conditional_1[0]
            born = np.cos(alpha) ** 2
            assert abs(f_plus - born) / born <= 0.03
            assert abs((1 - f_plus) - (1 - born)) / (1 - born) <= 0.03

    def test_single_party_csv_roundtrip(self, tmp_path):
        ens = ensemble_from_pure_state(FieldVector([1.0, 1.0]), BackgroundField(0.05))
        det = ThresholdDetector(0.02, pbs_projectors(0.0))
        batch = run_single_party_trials(ens, det, 500, SEED)
        path = tmp_path / "single.csv"
        batch.to_csv(path)
        back = TrialBatch.from_csv(path)
        np.testing.assert_array_equal(back.clicks1, batch.clicks1)
        assert not back.bipartite


class TestCalibration:
    def test_threshold_hits_target_fraction(self):
        cal = calibrate_threshold(0.06, 0.068, SEED, n_trials=100_000)
        fractions = dict(cal.grid)
        assert abs(fractions[cal.threshold] - 0.068) <= 0.01
        assert cal.balanced

    def test_csv_roundtrip_bipartite(self, tmp_path):
        ens = BipartiteEnsemble(SINGLET, BackgroundField(0.25))
        det = ThresholdDetector(0.1, pbs_projectors(0.0))
        batch = run_trials(ens, 0.0, np.pi / 8, det, 300, SEED)
        path = tmp_path / "trials.csv"
        batch.to_csv(path)
        back = TrialBatch.from_csv(path)
        np.testing.assert_array_equal(back.clicks1, batch.clicks1)
        np.testing.assert_array_equal(back.clicks2, batch.clicks2)
        assert back.theta2 == pytest.approx(np.pi / 8)
        e0, _ = correlation_from_clicks(batch)
        e1, _ = correlation_from_clicks(back)
        assert e0 == e1


@pytest.mark.parametrize("alpha", [np.pi / 6, np.pi / 3])
def test_click_probability_quadrature_oracle(alpha):
    """Cross-check simulated singles probabilities against quadrature.

    Conditioned on the shared complex amplitude, each channel power is an
    independent scaled noncentral chi-square, so the singles probabilities
    reduce to one-dimensional integrals; the simulation must agree.
    """
    scipy_stats = pytest.importorskip("scipy.stats")
    eps, d = 0.06, 0.0202
    nodes, weights = np.polynomial.laguerre.laggauss(160)
    t = 2 * d / eps
    wp, wm = np.cos(alpha) ** 2, np.sin(alpha) ** 2
    sf_p = scipy_stats.ncx2.sf(t, 2, 2 * wp * nodes / eps)
    sf_m = scipy_stats.ncx2.sf(t, 2, 2 * wm * nodes / eps)
    cdf_p = scipy_stats.ncx2.cdf(t, 2, 2 * wp * nodes / eps)
    cdf_m = scipy_stats.ncx2.cdf(t, 2, 2 * wm * nodes / eps)
    p_plus = float(np.sum(weights * sf_p * cdf_m))
    p_minus = float(np.sum(weights * cdf_p * sf_m))

    psi = FieldVector([np.cos(alpha), np.sin(alpha)])
    ens = ensemble_from_pure_state(psi, BackgroundField(eps))
    det = ThresholdDetector(d, pbs_projectors(0.0))
    n = 400_000
    batch = run_single_party_trials(ens, det, n, SEED)
    stats = click_statistics(batch)
    for observed, expected in (
        (stats.single_rates_1[0], p_plus),
        (stats.single_rates_1[1], p_minus),
    ):
        se = math.sqrt(expected * (1 - expected) / n)
        assert abs(observed - expected) <= 5.0 * se
