import numpy as np
import pytest

from patchlens.data_io import (
    CIFAR_RECORD, FormatError, LabelSource, LabeledImageSet, decode_cifar10_bytes,
    encode_cifar10_bytes, export_filter_bank, gen_shared_mean_dataset, import_filter_bank,
    load_cifar10_batch, make_binary_subset, make_labels, read_avg_patch_csv, shift_class_mean,
    write_avg_patch_csv,
)
from patchlens.patch_engine import fit_pca, to_pca
from patchlens.profile import FilterBank


def _cifar_bytes(rng, n, labels=None):
    imgs = rng.integers(0, 256, size=(n, 3, 32, 32), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n) if labels is None else np.asarray(labels)
    return imgs, labels, encode_cifar10_bytes(imgs, labels)


class TestCifar:
    def test_record_count(self, rng, tmp_path):
        _, _, raw = _cifar_bytes(rng, 7)
        path = tmp_path / "batch.bin"
        path.write_bytes(raw)
        ds = load_cifar10_batch(path)
        assert len(ds) == 7
        assert ds.images.shape == (7, 3, 32, 32)
        assert path.stat().st_size == 7 * CIFAR_RECORD

    def test_standard_batch_size_is_10000_records(self):
        assert 30_730_000 // CIFAR_RECORD == 10_000 and 30_730_000 % CIFAR_RECORD == 0

    def test_label_and_scaling(self, rng):
        imgs, _, raw = _cifar_bytes(rng, 1, labels=[6])
        imgs[0, 0, 0, 0] = 255
        raw = encode_cifar10_bytes(imgs, [6])
        ds = decode_cifar10_bytes(raw)
        assert ds.labels[0] == 6
        assert ds.class_names[6] == "frog"
        assert ds.images[0, 0, 0, 0] == 1.0

    def test_plane_layout(self):
        raw = bytearray(CIFAR_RECORD)
        raw[0] = 1
        raw[1 + 1024 + 32 * 2 + 5] = 51  # G plane, row 2, col 5
        ds = decode_cifar10_bytes(bytes(raw))
        assert ds.images[0, 1, 2, 5] == pytest.approx(0.2)
        assert ds.images.sum() == pytest.approx(0.2)

    def test_round_trip(self, rng):
        imgs, labels, raw = _cifar_bytes(rng, 5)
        ds = decode_cifar10_bytes(raw, scale=False)
        np.testing.assert_array_equal(ds.images.astype(np.uint8), imgs)
        np.testing.assert_array_equal(ds.labels, labels)

    def test_truncated(self, rng):
        _, _, raw = _cifar_bytes(rng, 2)
        with pytest.raises(FormatError, match="byte offset 3073"):
            decode_cifar10_bytes(raw[:-10])

    def test_bad_label(self, rng):
        imgs, _, _ = _cifar_bytes(rng, 2)
        raw = bytearray(encode_cifar10_bytes(imgs, [3, 0]))
        raw[CIFAR_RECORD] = 10
        with pytest.raises(FormatError, match="label byte 10"):
            decode_cifar10_bytes(bytes(raw))


class TestBinarySubset:
    def _set(self, counts):
        labels = np.concatenate([[c] * n for c, n in counts.items()])
        images = np.arange(labels.size, dtype=np.float64)[:, None, None, None] * np.ones((1, 1, 2, 2)) / 100
        return LabeledImageSet(images, labels)

    def test_dog_frog(self):
        ds = self._set({5: 5, 6: 5, 1: 3})
        b = make_binary_subset(ds, 5, 6)
        np.testing.assert_array_equal(b.y, [0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
        assert b.balanced

    def test_order_preserved(self):
        labels = np.array([6, 5, 6, 5])
        images = np.arange(4.0)[:, None, None, None] * np.ones((1, 1, 1, 1))
        b = make_binary_subset(LabeledImageSet(images, labels), 5, 6)
        np.testing.assert_array_equal(b.images[:, 0, 0, 0], [1, 3, 0, 2])

    def test_same_class(self):
        with pytest.raises(ValueError):
            make_binary_subset(self._set({5: 2}), 5, 5)

    def test_missing_class(self):
        with pytest.raises(ValueError, match="has no images"):
            make_binary_subset(self._set({5: 2}), 5, 6)


class TestSharedMean:
    @pytest.mark.parametrize("seed", range(5))
    def test_means_equal(self, seed):
        ds = gen_shared_mean_dataset(50, 27, 0.2, seed)
        K, y = ds.K.K, ds.y
        assert np.linalg.norm(K[y == 0].mean(0) - K[y == 1].mean(0)) <= 1e-13
        assert ds.balance == (50, 50)

    def test_single_row_per_class(self):
        K = gen_shared_mean_dataset(1, 9, 0.1, 3).K.K
        np.testing.assert_array_equal(K[0], K[1])

    def test_deterministic(self):
        a = gen_shared_mean_dataset(10, 5, 0.1, 42).K.K
        b = gen_shared_mean_dataset(10, 5, 0.1, 42).K.K
        assert a.tobytes() == b.tobytes()

    def test_validation(self):
        with pytest.raises(ValueError):
            gen_shared_mean_dataset(0, 5, 0.1, 0)
        with pytest.raises(ValueError):
            gen_shared_mean_dataset(5, 5, 0.0, 0)


class TestShift:
    @pytest.fixture
    def setup(self):
        ds = gen_shared_mean_dataset(30, 12, 0.1, 1)
        basis = fit_pca(ds.K.K, centered=True, population="avg_patch_rows")
        return ds.K.K, ds.y, basis

    def test_zero_is_identity(self, setup):
        K, y, basis = setup
        assert shift_class_mean(K, y, basis, 3, 0.0).tobytes() == K.tobytes()

    def test_projected_difference(self, setup):
        K, y, basis = setup
        Ks = shift_class_mean(K, y, basis, 2, 0.3)
        diff = to_pca(Ks[y == 1].mean(0) - Ks[y == 0].mean(0), basis)
        expected = np.zeros(12)
        expected[2] = 0.3
        np.testing.assert_allclose(diff, expected, rtol=0, atol=1e-12)

    def test_composition(self, setup):
        K, y, basis = setup
        two = shift_class_mean(shift_class_mean(K, y, basis, 4, 0.2), y, basis, 4, 0.5)
        one = shift_class_mean(K, y, basis, 4, 0.7)
        assert np.abs(two - one).max() <= 1e-12

    def test_only_class_one_rows_change(self, setup):
        K, y, basis = setup
        Ks = shift_class_mean(K, y, basis, 0, 1.0)
        for row_in, row_out, lab in zip(K, Ks, y):
            assert np.array_equal(row_in, row_out) == (lab == 0)

    def test_bad_direction(self, setup):
        K, y, basis = setup
        with pytest.raises(ValueError):
            shift_class_mean(K, y, basis, 12, 0.1)


class TestLabels:
    def test_expectation(self):
        np.testing.assert_array_equal(make_labels(LabelSource("expectation"), 4), [0.5] * 4)

    def test_bernoulli_mean(self):
        y = make_labels(LabelSource("bernoulli", seed=9), 100_000)
        assert set(np.unique(y)) == {0.0, 1.0}
        assert abs(y.mean() - 0.5) <= 0.01

    def test_bernoulli_deterministic(self):
        a = make_labels(LabelSource("bernoulli", seed=3), 50)
        b = make_labels(LabelSource("bernoulli", seed=3), 50)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, make_labels(LabelSource("bernoulli", seed=4), 50))

    def test_true_passthrough(self):
        y = make_labels(LabelSource("true", labels=(0, 1, 1)), 3)
        np.testing.assert_array_equal(y, [0, 1, 1])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            LabelSource("uniform")


class TestFilterCsv:
    def test_round_trip_exact(self, rng, tmp_path):
        F = rng.standard_normal((64, 27)) * 10.0 ** rng.integers(-8, 8, size=(64, 27))
        path = tmp_path / "f.csv"
        export_filter_bank(FilterBank(F), path)
        back = import_filter_bank(path)
        assert np.abs(back.F - F).max() == 0.0
        assert (back.c, back.k) == (3, 3)
        lines = path.read_text().split("\n")
        assert lines[0] == "patchlens-filters v1"
        assert lines[1] == "64,27,3,3"

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("patchlens-filters v1\n2,4,1,2\n1,2,3,4\n1,2,3\n")
        with pytest.raises(FormatError, match="line 4"):
            import_filter_bank(path)

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("patchlens-filters v1\n1,4,1,2\n1,x,3,4\n")
        with pytest.raises(FormatError, match="line 3"):
            import_filter_bank(path)

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("patchlens-filters v1\n3,4,1,2\n1,2,3,4\n")
        with pytest.raises(FormatError, match="declares 3 rows"):
            import_filter_bank(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("filters\n1,1,1,1\n0\n")
        with pytest.raises(FormatError, match="line 1"):
            import_filter_bank(path)

    def test_empty_bank(self, tmp_path):
        with pytest.raises(ValueError, match="empty filter bank"):
            export_filter_bank(np.zeros((0, 27)), tmp_path / "f.csv")

    def test_non_finite_export(self, tmp_path):
        with pytest.raises(ValueError):
            export_filter_bank(np.array([[np.nan, 1.0]]), tmp_path / "f.csv")


def test_avg_patch_csv_round_trip(rng, tmp_path):
    K = rng.random((6, 12))
    y = np.array([0, 1, 0, 1, 1, 0])
    write_avg_patch_csv(K, y, tmp_path / "k.csv")
    K2, y2 = read_avg_patch_csv(tmp_path / "k.csv")
    assert np.array_equal(K2.K, K)
    np.testing.assert_array_equal(y2, y)
