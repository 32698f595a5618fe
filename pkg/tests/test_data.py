import gzip
import struct
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntk_lens import data
from ntk_lens.data import Dataset, SyntheticTaskSpec


def idx_images(pixels, magic=0x00000803):
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, r, c = pixels.shape
    return struct.pack(">IIII", magic, n, r, c) + pixels.tobytes()


def idx_labels(labels, magic=0x00000801):
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", magic, labels.size) + labels.tobytes()


@pytest.fixture
def idx_pair(tmp_path):
    img = tmp_path / "img"
    lab = tmp_path / "lab"
    img.write_bytes(idx_images([[[0, 255], [51, 102]], [[255, 0], [0, 255]]]))
    lab.write_bytes(idx_labels([3, 7]))
    return img, lab


def cifar_record(label, fill=0):
    return bytes([label]) + bytes([fill]) * 3072


def dataset(labels, n_classes, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.uniform(size=(len(labels), dim)), data.one_hot(labels, n_classes), "toy")


class TestIdx:
    def test_fixture_values(self, idx_pair):
        ds = data.load_idx(*idx_pair)
        np.testing.assert_array_equal(ds.inputs, [[0.0, 1.0, 0.2, 0.4], [1.0, 0.0, 0.0, 1.0]])
        np.testing.assert_array_equal(ds.class_index, [3, 7])
        assert ds.labels.shape == (2, 10)

    def test_gzip(self, idx_pair, tmp_path):
        img, lab = idx_pair
        gz = tmp_path / "img.gz"
        gz.write_bytes(gzip.compress(img.read_bytes()))
        np.testing.assert_array_equal(data.load_idx(gz, lab).inputs, data.load_idx(img, lab).inputs)

    def test_bad_magic(self, idx_pair):
        img, lab = idx_pair
        img.write_bytes(idx_images(np.zeros((2, 2, 2)), magic=0x00000801))
        with pytest.raises(data.BadMagicError, match="bad magic"):
            data.load_idx(img, lab)

    def test_count_mismatch(self, idx_pair):
        img, lab = idx_pair
        lab.write_bytes(idx_labels([1, 2, 3]))
        with pytest.raises(data.CountMismatchError):
            data.load_idx(img, lab)

    def test_truncated_pixels(self, idx_pair):
        img, lab = idx_pair
        img.write_bytes(img.read_bytes()[:-1])
        with pytest.raises(data.TruncatedFileError):
            data.load_idx(img, lab)

    def test_truncated_header(self, idx_pair):
        img, lab = idx_pair
        lab.write_bytes(b"\x00\x00")
        with pytest.raises(data.TruncatedFileError):
            data.load_idx(img, lab)

    def test_errors_are_distinct(self):
        kinds = {data.BadMagicError, data.TruncatedFileError, data.CountMismatchError}
        assert len(kinds) == 3 and all(issubclass(k, data.DataError) for k in kinds)

    def test_missing_file(self, tmp_path):
        with pytest.raises(data.DatasetNotFoundError, match="dataset not found") as info:
            data.load_idx(tmp_path / "nope", tmp_path / "nope2")
        assert str(tmp_path.resolve()) in str(info.value)


class TestCifar:
    def test_single_record(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(cifar_record(4, fill=255))
        ds = data.load_cifar_binary(p)
        assert ds.inputs.shape == (1, 3072)
        np.testing.assert_array_equal(ds.inputs, 1.0)
        np.testing.assert_array_equal(ds.labels[0], np.eye(10)[4])

    def test_concatenates_batches(self, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        a.write_bytes(cifar_record(0) + cifar_record(1))
        b.write_bytes(cifar_record(9))
        np.testing.assert_array_equal(data.load_cifar_binary([a, b]).class_index, [0, 1, 9])

    def test_misaligned(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(cifar_record(1) + b"\x00")
        with pytest.raises(data.RecordAlignmentError):
            data.load_cifar_binary(p)

    def test_label_out_of_range(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(cifar_record(11))
        with pytest.raises(data.LabelRangeError):
            data.load_cifar_binary(p)


class TestFilterClasses:
    def test_keep_all(self):
        ds = dataset([0, 1, 2, 1], 3)
        out = data.filter_classes(ds, [0, 1, 2])
        np.testing.assert_array_equal(out.inputs, ds.inputs)
        np.testing.assert_array_equal(out.labels, ds.labels)

    def test_cifar4_by_name(self):
        ds = Dataset(np.zeros((10, 2)), data.one_hot(np.arange(10), 10), "c", data.CIFAR10_CLASSES)
        out = data.filter_classes(ds, data.CIFAR4_CLASSES)
        assert out.n_classes == 4
        assert out.class_names == ("bird", "cat", "airplane", "automobile")
        # original rows airplane(0), automobile(1), bird(2), cat(3) map to 2, 3, 0, 1
        np.testing.assert_array_equal(out.class_index, [2, 3, 0, 1])

    def test_single_class(self):
        out = data.filter_classes(dataset([0, 1, 1, 2], 3), [1])
        np.testing.assert_array_equal(out.labels, [[1.0], [1.0]])

    def test_unknown_class(self):
        with pytest.raises(data.DataError, match="unknown class"):
            data.filter_classes(dataset([0, 1], 2), ["zebra"])

    def test_empty_keep(self):
        with pytest.raises(data.DataError):
            data.filter_classes(dataset([0, 1], 2), [])


class TestNoisyReplacement:
    def test_keep_all_unchanged(self):
        ds = dataset([0, 1, 0, 1], 2)
        out = data.noisy_replacement(ds, 1.0, seed=3)
        np.testing.assert_array_equal(out.inputs, ds.inputs)

    def test_even_split(self):
        ds = dataset([0] * 10, 1, dim=50)
        out = data.noisy_replacement(ds, 0.2, seed=1)
        unchanged = [i for i in range(10) if np.array_equal(out.inputs[i], ds.inputs[i])]
        assert len(unchanged) == 2
        replaced = [i for i in range(10) if i not in unchanged]
        # each replaced row is closest to exactly one kept source
        sources = Counter(min(unchanged, key=lambda k: np.linalg.norm(out.inputs[r] - ds.inputs[k])) for r in replaced)
        assert sorted(sources.values()) == [4, 4]

    def test_uneven_split_floor_ceil(self):
        ds = dataset([0] * 10, 1, dim=50)
        out = data.noisy_replacement(ds, 0.3, seed=2)
        kept = [i for i in range(10) if np.array_equal(out.inputs[i], ds.inputs[i])]
        replaced = [i for i in range(10) if i not in kept]
        uses = Counter(min(kept, key=lambda k: np.linalg.norm(out.inputs[r] - ds.inputs[k])) for r in replaced)
        assert sorted(uses.values()) == [2, 2, 3]

    def test_noise_std(self):
        ds = dataset([0] * 40 + [1] * 40, 2, dim=500)
        out = data.noisy_replacement(ds, 0.25, sigma=0.01, seed=0)
        moved = ~np.all(out.inputs == ds.inputs, axis=1)
        # the nearest original row is the source
        diffs = []
        for r in np.flatnonzero(moved):
            d = np.linalg.norm(ds.inputs - out.inputs[r], axis=1)
            d[moved] = np.inf
            diffs.append(out.inputs[r] - ds.inputs[int(np.argmin(d))])
        diffs = np.concatenate(diffs)
        assert diffs.size >= 10_000
        assert 0.008 <= diffs.std() <= 0.012

    @given(st.lists(st.integers(0, 3), min_size=8, max_size=60), st.floats(0.3, 1.0), st.integers(0, 1000))
    @settings(max_examples=30)
    def test_class_counts_preserved(self, labels, frac, seed):
        ds = dataset(labels, 4)
        counts = Counter(labels)
        if any(round(frac * c) == 0 for c in counts.values()):
            with pytest.raises(data.DataError):
                data.noisy_replacement(ds, frac, seed=seed)
            return
        out = data.noisy_replacement(ds, frac, seed=seed)
        np.testing.assert_array_equal(out.labels, ds.labels)
        assert len(out) == len(ds)

    def test_zero_kept(self):
        with pytest.raises(data.DataError):
            data.noisy_replacement(dataset([0, 0, 0], 1), 0.1)

    @pytest.mark.parametrize("frac", [0.0, 1.5])
    def test_fraction_range(self, frac):
        with pytest.raises(data.DataError):
            data.noisy_replacement(dataset([0, 1], 2), frac)

    def test_not_clamped(self):
        ds = Dataset(np.ones((20, 200)), data.one_hot([0] * 20, 1))
        out = data.noisy_replacement(ds, 0.1, sigma=0.01, seed=0)
        assert out.inputs.max() > 1.0


class TestSubsample:
    def test_full_permutation(self):
        ds = dataset(list(range(5)), 5)
        idx = data.subsample_indices(5, 5, seed=0)
        assert sorted(idx) == list(range(5))
        assert len(data.subsample(ds, 5, seed=0)) == 5

    def test_deterministic(self):
        np.testing.assert_array_equal(data.subsample_indices(100, 10, 7), data.subsample_indices(100, 10, 7))

    def test_count(self):
        idx = data.subsample_indices(60_000, 100, 1)
        assert idx.size == 100 and np.unique(idx).size == 100

    def test_too_many(self):
        with pytest.raises(data.DataError):
            data.subsample_indices(5, 6, 0)


class TestSynthetic:
    def test_zero_std_gives_centers(self):
        spec = SyntheticTaskSpec(n_classes=3, input_dim=5, cluster_std=0.0, modes_per_class=1)
        ds = data.make_synthetic(spec, 30)
        centers = data.synthetic_centers(spec)
        np.testing.assert_array_equal(ds.inputs, centers[ds.class_index])

    def test_centers_unit_norm_and_separated(self):
        spec = SyntheticTaskSpec()
        c = data.synthetic_centers(spec)
        assert c.shape == (spec.n_classes * spec.modes_per_class, spec.input_dim)
        np.testing.assert_allclose(np.linalg.norm(c, axis=1), 1.0, rtol=1e-14)
        cos = c @ c.T - np.eye(len(c)) * 2
        assert cos.max() <= np.cos(np.deg2rad(30.0)) + 1e-12

    def test_nearest_mean_classifier(self):
        spec = SyntheticTaskSpec(n_classes=2, input_dim=10, cluster_std=0.1, modes_per_class=1, seed=4)
        ds = data.make_synthetic(spec, 2000)
        c = data.synthetic_centers(spec)
        pred = np.argmin(((ds.inputs[:, None, :] - c[None]) ** 2).sum(-1), axis=1)
        assert np.mean(pred == ds.class_index) >= 0.95

    def test_deterministic(self):
        spec = SyntheticTaskSpec(seed=5)
        a, b = data.make_synthetic(spec, 50), data.make_synthetic(spec, 50)
        assert a.inputs.tobytes() == b.inputs.tobytes()

    def test_balanced(self):
        ds = data.make_synthetic(SyntheticTaskSpec(n_classes=4), 100)
        np.testing.assert_array_equal(ds.labels.sum(axis=0), 25)

    def test_impossible_separation(self):
        spec = SyntheticTaskSpec(n_classes=8, input_dim=2, modes_per_class=1, min_angle_deg=60)
        with pytest.raises(data.DataError):
            data.synthetic_centers(spec)


class TestDataset:
    def test_rejects_non_one_hot(self):
        with pytest.raises(data.DataError):
            Dataset(np.zeros((2, 2)), np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_rejects_count_mismatch(self):
        with pytest.raises(data.DataError):
            Dataset(np.zeros((3, 2)), np.eye(2))

    def test_round_trip(self, tmp_path, idx_pair):
        for ds in (data.load_idx(*idx_pair), data.make_synthetic(SyntheticTaskSpec(), 20)):
            path = tmp_path / f"{ds.name}.npz"
            data.save_dataset(ds, path)
            back = data.load_dataset(path)
            assert back.inputs.tobytes() == ds.inputs.tobytes()
            assert back.labels.tobytes() == ds.labels.tobytes()
            assert back.name == ds.name and back.class_names == ds.class_names


class TestLoadNamed:
    def test_mnist_layout(self, tmp_path):
        sub = tmp_path / "mnist"
        sub.mkdir()
        (sub / "t10k-images-idx3-ubyte").write_bytes(idx_images(np.zeros((3, 2, 2))))
        (sub / "t10k-labels-idx1-ubyte.gz").write_bytes(gzip.compress(idx_labels([0, 1, 2])))
        ds = data.load_named("mnist", "test", tmp_path)
        assert len(ds) == 3

    def test_cifar4(self, tmp_path):
        (tmp_path / "test_batch.bin").write_bytes(b"".join(cifar_record(c) for c in range(10)))
        assert data.load_named("cifar4", "test", tmp_path).n_classes == 4

    def test_missing(self, tmp_path):
        with pytest.raises(data.DatasetNotFoundError):
            data.load_named("fashion_mnist", "train", tmp_path)

    def test_data_dir_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv(data.DATA_DIR_ENV, str(tmp_path))
        assert data.data_dir() == tmp_path
        assert data.data_dir("elsewhere") == Path("elsewhere")
