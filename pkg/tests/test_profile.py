import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchlens.patch_engine import fit_pca
from patchlens.profile import (
    EnergyProfile, FilterBank, energy_profile, infer_geometry, pair_distances,
    profile_correlation, sample_pairs, subtract_init,
)


@pytest.fixture
def basis(rng):
    return fit_pca(rng.standard_normal((60, 12)) @ rng.standard_normal((12, 12)), centered=True)


class TestEnergyProfile:
    def test_basis_vectors_give_ones(self, basis):
        e = energy_profile(FilterBank(basis.U.T), basis, "rms")
        np.testing.assert_allclose(e.e, 1.0, atol=1e-12)

    def test_first_direction(self, basis):
        e = energy_profile(FilterBank(basis.U[:, 0]), basis, "rms").e
        expected = np.zeros(12)
        expected[0] = 1.0
        np.testing.assert_allclose(e, expected, atol=1e-12)

    @pytest.mark.parametrize("c", [0.5, 2.0, 17.0])
    def test_homogeneity(self, rng, basis, c):
        F = rng.standard_normal((8, 12))
        for variant, power in (("rms", 1), ("mean_square", 2)):
            base = energy_profile(F, basis, variant).e
            np.testing.assert_allclose(energy_profile(c * F, basis, variant).e, c ** power * base, rtol=1e-12)

    def test_variants_related(self, rng, basis):
        F = rng.standard_normal((5, 12))
        rms = energy_profile(F, basis, "rms").e
        ms = energy_profile(F, basis, "mean_square").e
        np.testing.assert_allclose(rms ** 2, 5 * ms, rtol=1e-12)

    def test_filter_permutation_invariant(self, rng, basis):
        F = rng.standard_normal((7, 12))
        a = energy_profile(F, basis).e
        b = energy_profile(F[rng.permutation(7)], basis).e
        np.testing.assert_allclose(a, b, rtol=1e-13)

    def test_left_orthogonal_invariant(self, rng, basis):
        F = rng.standard_normal((6, 12))
        Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        np.testing.assert_allclose(energy_profile(Q @ F, basis).e, energy_profile(F, basis).e, rtol=1e-10)

    def test_carries_basis_metadata(self, rng, basis):
        e = energy_profile(rng.standard_normal((2, 12)), basis)
        assert e.basis_fingerprint == basis.fingerprint()
        assert len(e) == 12

    def test_dimension_mismatch(self, rng, basis):
        with pytest.raises(ValueError, match="dimension mismatch"):
            energy_profile(rng.standard_normal((2, 9)), basis)

    def test_unknown_variant(self, rng, basis):
        with pytest.raises(ValueError):
            energy_profile(rng.standard_normal((2, 12)), basis, "l1")


class TestFilterBank:
    def test_geometry(self):
        assert infer_geometry(27) == (3, 3)
        assert infer_geometry(25) == (1, 5)
        fb = FilterBank(np.zeros((4, 12)))
        assert (fb.M, fb.d) == (4, 12)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            FilterBank(np.array([[np.inf, 0.0]]))

    def test_subtract_init(self, rng):
        F0 = rng.standard_normal((3, 27))
        delta = rng.standard_normal((3, 27))
        out = subtract_init(FilterBank(F0 + delta), FilterBank(F0))
        np.testing.assert_allclose(out.F, delta, atol=1e-14)
        with pytest.raises(ValueError):
            subtract_init(F0, F0[:2])


class TestCorrelation:
    def test_self(self, rng):
        e = rng.random(27)
        assert profile_correlation(e, e) == pytest.approx(1.0, abs=1e-12)
        assert profile_correlation(e, -e) == pytest.approx(-1.0, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(0.01, 100.0), b=st.floats(-100.0, 100.0), seed=st.integers(0, 2**31))
    def test_affine(self, a, b, seed):
        e = np.random.default_rng(seed).random(20)
        assert profile_correlation(e, a * e + b) == pytest.approx(1.0, abs=1e-12)

    def test_constant(self):
        with pytest.raises(ValueError, match="zero variance profile"):
            profile_correlation(np.ones(5), np.arange(5.0))

    def test_cross_variant_refused(self):
        a = EnergyProfile(np.arange(3.0), "rms")
        b = EnergyProfile(np.arange(3.0), "mean_square")
        with pytest.raises(ValueError, match="refusing"):
            profile_correlation(a, b)


class TestPairDistances:
    def test_pairs_distinct_and_deterministic(self):
        p = sample_pairs(5, 1000, 3)
        assert np.all(p[:, 0] != p[:, 1])
        assert p.min() >= 0 and p.max() < 5
        assert np.array_equal(p, sample_pairs(5, 1000, 3))
        assert len(np.unique(p[:, 0] * 5 + p[:, 1])) == 20

    def test_identity(self, rng):
        X = rng.random((50, 9))
        res = pair_distances(X, np.eye(9), 200, seed=1)
        np.testing.assert_allclose(res.mapped_dist, res.input_dist, rtol=1e-14)

    def test_zero(self, rng):
        res = pair_distances(rng.random((50, 9)), np.zeros((4, 9)), 100)
        assert np.all(res.mapped_dist == 0)
        assert np.isnan(res.correlation)

    def test_orthonormal(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((9, 9)))
        res = pair_distances(rng.random((50, 9)), Q, 300, seed=2)
        assert res.correlation == pytest.approx(1.0, abs=1e-12)

    def test_gram_oracle(self, rng):
        X = rng.random((40, 6))
        F = rng.standard_normal((3, 6))
        res = pair_distances(X, F, 50, seed=4)
        G = F.T @ F
        for (i, j), m in zip(res.pairs, res.mapped_dist):
            diff = X[i] - X[j]
            assert m == pytest.approx(np.sqrt(diff @ G @ diff), rel=1e-12)

    def test_reference_bank(self, rng):
        X = rng.random((30, 6))
        F = rng.standard_normal((4, 6))
        res = pair_distances(X, F, 100, seed=0, reference=F)
        np.testing.assert_array_equal(res.input_dist, res.mapped_dist)
        assert res.correlation == pytest.approx(1.0, abs=1e-12)

    def test_too_few_patches(self):
        with pytest.raises(ValueError):
            pair_distances(np.ones((1, 3)), np.eye(3), 5)
