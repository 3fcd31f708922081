import numpy as np
import pytest

from patchlens.analytic import (
    SingularSystemError, ab_diagonals, closed_form_exact, closed_form_paper, commutation_gap,
    expected_random_solution, geometric_gain, lambda_matrix, lambda_matrix_exact,
    predicted_label_sensitivity, predicted_profile, ridge_solution, woodbury_expectation,
)
from patchlens.data_io import gen_shared_mean_dataset
from patchlens.linear_dynamics import gd_run
from patchlens.patch_engine import fit_pca, second_moment_stats, to_pca
from patchlens.verify import aligned_instance, random_instance, stable_eta


class TestGain:
    def test_zero_eigenvalue(self):
        assert geometric_gain(np.array([0.0]), 0.1, 7)[0] == pytest.approx(0.7, abs=1e-15)

    def test_hand_value(self):
        assert geometric_gain(np.array([1.0]), 0.1, 2)[0] == pytest.approx(0.19, abs=1e-15)

    def test_matches_partial_sum(self):
        lam = np.array([1e-9, 0.3, 2.0, 9.0, 15.0])
        eta, t = 0.1, 37
        oracle = [eta * sum((1 - eta * l) ** j for j in range(t)) for l in lam]
        np.testing.assert_allclose(geometric_gain(lam, eta, t), oracle, rtol=1e-12)

    def test_small_limit_continuous(self):
        g = geometric_gain(np.array([0.0, 1e-14]), 0.05, 1000)
        assert g[1] == pytest.approx(g[0], rel=1e-9)


class TestAb:
    def test_examples(self):
        ab = ab_diagonals([1.0], [0.0], 0.1, 2)
        assert ab.a[0] == pytest.approx(0.19, abs=1e-15)
        ab = ab_diagonals([1.0], [1.0], 0.1, 1)
        np.testing.assert_allclose([ab.a[0], ab.b[0]], [0.1, 0.1], atol=1e-15)

    def test_zero_mean_degenerates(self):
        ab = ab_diagonals([0.5, 2.0], [0.0, 0.0], 0.1, 5)
        np.testing.assert_array_equal(ab.a, ab.b)

    def test_validation(self):
        with pytest.raises(ValueError):
            ab_diagonals([1.0], [0.0], 0.0, 1)


class TestClosedForms:
    def test_t_zero(self, rng):
        Kt, y = random_instance(rng)[:2]
        assert np.all(closed_form_exact(Kt, y, 0.01, 0).w_tilde == 0)
        assert np.all(closed_form_paper(Kt, y, 0.01, 0).w_tilde == 0)

    def test_exact_example(self):
        np.testing.assert_allclose(closed_form_exact(np.eye(2), [1.0, 0.0], 0.1, 2).w_tilde, [0.19, 0.0], atol=1e-15)

    @pytest.mark.parametrize("t", [1, 10, 1000])
    def test_exact_matches_gd(self, t):
        rng = np.random.default_rng(t)
        for _ in range(20):
            Kt, y = random_instance(rng)[:2]
            eta = stable_eta(Kt)
            ref = gd_run(Kt, y, eta, t).final[0]
            assert np.abs(closed_form_exact(Kt, y, eta, t).w_tilde - ref).max() <= 1e-9

    def test_one_over_n_scaling(self, rng):
        Kt, y = random_instance(rng)[:2]
        a = closed_form_exact(Kt, y, 0.5, 20, "one_over_N").w_tilde
        b = gd_run(Kt, y, 0.5, 20, loss_scale="one_over_N").final[0]
        assert np.abs(a - b).max() <= 1e-12

    def test_paper_form_zero_mean(self, rng):
        K = rng.standard_normal((40, 6))
        K -= K.mean(axis=0)
        Kt = to_pca(K, fit_pca(K, centered=True, population="avg_patch_rows"))
        y = rng.standard_normal(40)
        eta = stable_eta(Kt)
        for t in (1, 5, 50):
            ref = gd_run(Kt, y, eta, t).final[0]
            assert np.abs(closed_form_paper(Kt, y, eta, t).w_tilde - ref).max() <= 1e-10

    @pytest.mark.parametrize("axis", [0, 3])
    def test_paper_form_aligned_mean(self, axis):
        rng = np.random.default_rng(axis)
        Kt, y = aligned_instance(rng, 64, 8, axis)[:2]
        eta = stable_eta(Kt)
        for t in (1, 5, 50):
            ref = gd_run(Kt, y, eta, t).final[0]
            assert np.abs(closed_form_paper(Kt, y, eta, t).w_tilde - ref).max() <= 1e-9 * max(1.0, np.abs(ref).max())

    def test_verbatim_coefficient_differs(self):
        rng = np.random.default_rng(7)
        Kt, y = aligned_instance(rng, 64, 8, 1)[:2]
        eta = stable_eta(Kt)
        ref = gd_run(Kt, y, eta, 5).final[0]
        verbatim = closed_form_paper(Kt, y, eta, 5, verbatim=True).w_tilde
        assert np.abs(verbatim - ref).max() > 1e-3

    def test_commutation_gap_general(self, rng):
        Kt, y = random_instance(rng)[:2]
        K = Kt + 0.3
        assert commutation_gap(K, y, stable_eta(K), 20) > 1e-6


class TestLambda:
    def test_zero_mean_diagonal(self):
        lam = np.array([2.0, 0.5, 0.1])
        eta, t = 0.1, 4
        ab = ab_diagonals(lam, np.zeros(3), eta, t)
        L = lambda_matrix(ab, np.zeros(3), lam).Lambda
        expected = lam / (1 - (1 - eta * lam) ** t) - lam
        np.testing.assert_allclose(L, np.diag(expected), atol=1e-12)

    def test_long_time_limit(self):
        lam = np.array([2.0, 0.5, 0.1])
        ab = ab_diagonals(lam, np.zeros(3), 0.1, 100_000)
        assert np.abs(lambda_matrix(ab, np.zeros(3), lam).Lambda).max() <= 1e-12

    def test_singular(self):
        ab = ab_diagonals([1.0, 1.0], [0.0, 0.0], 0.1, 0)
        with pytest.raises(SingularSystemError, match="smallest singular value"):
            lambda_matrix(ab, [0.0, 0.0], [1.0, 1.0])

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        Kt, _ = aligned_instance(rng, 64, 8, 2)[:2]
        s = second_moment_stats(Kt)
        ab = ab_diagonals(s.sigma_diag, s.mu_hat, stable_eta(Kt), 10)
        L = lambda_matrix(ab, s.mu_hat, s.sigma_diag).Lambda
        np.testing.assert_array_equal(L, L.T)

    def test_exact_matches_rank_one_when_aligned(self):
        rng = np.random.default_rng(4)
        Kt, _ = aligned_instance(rng, 64, 8, 0)[:2]
        eta = stable_eta(Kt)
        s = second_moment_stats(Kt)
        ab = ab_diagonals(s.sigma_diag, s.mu_hat, eta, 10)
        a = lambda_matrix(ab, s.mu_hat, s.sigma_diag).Lambda
        b = lambda_matrix_exact(Kt, eta, 10).Lambda
        assert np.abs(a - b).max() <= 1e-6 * np.abs(b).max()


class TestRidge:
    def test_ols(self, rng):
        Kt = rng.standard_normal((30, 5))
        y = rng.standard_normal(30)
        w = ridge_solution(Kt, y, np.zeros((5, 5))).w_tilde
        assert np.abs(Kt.T @ (Kt @ w - y)).max() <= 1e-9

    def test_large_penalty(self, rng):
        Kt, y = rng.standard_normal((30, 5)), rng.standard_normal(30)
        norms = [np.linalg.norm(ridge_solution(Kt, y, c * np.eye(5)).w_tilde) for c in (1e2, 1e6, 1e10)]
        assert norms[0] > norms[1] > norms[2] and norms[2] < 1e-8

    def test_round_trip_exact(self, rng):
        Kt, y = random_instance(rng)[:2]
        eta = stable_eta(Kt)
        L = lambda_matrix_exact(Kt, eta, 25)
        w = ridge_solution(Kt, y, L).w_tilde
        ref = closed_form_exact(Kt, y, eta, 25).w_tilde
        assert np.abs(w - ref).max() <= 1e-8 * max(1.0, np.abs(ref).max())

    def test_round_trip_rank_one(self):
        rng = np.random.default_rng(5)
        Kt, y = aligned_instance(rng, 64, 8, 1)[:2]
        eta = stable_eta(Kt)
        s = second_moment_stats(Kt)
        L = lambda_matrix(ab_diagonals(s.sigma_diag, s.mu_hat, eta, 5), s.mu_hat, s.sigma_diag)
        w = ridge_solution(Kt, y, L).w_tilde
        ref = closed_form_paper(Kt, y, eta, 5).w_tilde
        assert np.abs(w - ref).max() <= 1e-8


class TestWoodbury:
    def test_zero_mean(self):
        assert np.all(expected_random_solution(np.eye(3), np.zeros(3)).w_tilde == 0)

    def test_hand_example(self):
        sol = expected_random_solution(np.eye(2), np.array([1.0, 0.0]))
        np.testing.assert_allclose(sol.w_tilde, [0.5, 0.0], atol=1e-15)
        np.testing.assert_allclose(sol.diagnostics["direct"], [0.5, 0.0], atol=1e-15)

    def test_random_cosine(self, rng):
        for _ in range(20):
            A = rng.standard_normal((16, 16))
            sol = expected_random_solution(A @ A.T + np.eye(16), rng.standard_normal(16))
            assert sol.diagnostics["cosine"] >= 1 - 1e-12

    def test_data_driven_matches_half_labels(self, rng):
        Kt = random_instance(rng)[0] + 0.2
        eta = stable_eta(Kt)
        w = woodbury_expectation(Kt, eta, 30).w_tilde
        ref = closed_form_exact(Kt, np.full(Kt.shape[0], 0.5), eta, 30).w_tilde
        cos = w @ ref / (np.linalg.norm(w) * np.linalg.norm(ref))
        assert cos >= 1 - 1e-10


class TestPredictions:
    def test_profile_examples(self):
        np.testing.assert_allclose(predicted_profile(np.zeros(4), 0.1).e, 0.01, rtol=1e-15)
        np.testing.assert_array_equal(predicted_profile(np.array([1.0, -2.0]), 0).e, [1.0, 4.0])
        assert predicted_profile(np.ones(2)).variant == "mean_square"

    def test_equal_means(self):
        ds = gen_shared_mean_dataset(50, 27, 0.2, 1)
        basis = fit_pca(ds.K.K, centered=True, population="avg_patch_rows")
        Kt = to_pca(ds.K.K, basis)
        r = predicted_label_sensitivity(Kt, ds.y, 0.1, 100, loss_scale="one_over_N")
        assert r == pytest.approx(1.0, abs=1e-9)

    def test_sigma_shift_leaves_correlation(self, rng):
        Kt, y = random_instance(rng)[:2]
        a = predicted_label_sensitivity(Kt, y, 0.1, 20, 0.0, "one_over_N")
        b = predicted_label_sensitivity(Kt, y, 0.1, 20, 5.0, "one_over_N")
        assert a == pytest.approx(b, abs=1e-9)
