"""Datasets: MNIST-style IDX files, CIFAR-10 binary batches, and a synthetic Gaussian task.

Inputs are rows of a float64 matrix, pixels scaled to [0, 1]; labels are one-hot.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR10_CLASSES = (
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
)
CIFAR4_CLASSES = ("bird", "cat", "airplane", "automobile")
DATA_DIR_ENV = "NTK_LENS_DATA_DIR"


class DataError(ValueError):
    pass


class DatasetNotFoundError(FileNotFoundError):
    def __init__(self, path):
        self.path = Path(path).resolve()
        super().__init__(f"dataset not found: {self.path}")


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class RecordAlignmentError(DataError):
    pass


class LabelRangeError(DataError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.labels.ndim != 2:
            raise DataError("inputs and labels must be 2-D")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")
        if self.labels.size and not np.all(self.labels.sum(axis=1) == 1.0):
            raise DataError("labels must be one-hot")
        if self.class_names and len(self.class_names) != self.labels.shape[1]:
            raise DataError("class_names does not match label width")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def class_index(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(self.inputs[rows], self.labels[rows], self.name, self.class_names)


def one_hot(indices, n_classes: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.intp)
    out = np.zeros((idx.size, n_classes))
    out[np.arange(idx.size), idx] = 1.0
    return out


def data_dir(configured: str | os.PathLike | None = None) -> Path:
    if configured:
        return Path(configured)
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def _read_bytes(path) -> bytes:
    p = Path(path)
    if not p.exists():
        raise DatasetNotFoundError(p)
    opener = gzip.open if p.suffix == ".gz" else open
    with opener(p, "rb") as fh:
        return fh.read()


def _idx_header(raw: bytes, magic: int, ndims: int, path) -> tuple[int, ...]:
    header_len = 4 * (1 + ndims)
    if len(raw) < header_len:
        raise TruncatedFileError(f"{path}: file shorter than its {header_len}-byte header")
    found, *dims = struct.unpack(f">{1 + ndims}I", raw[:header_len])
    if found != magic:
        raise BadMagicError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    return tuple(dims)


def load_idx(images_path, labels_path, name: str = "mnist", class_names=None) -> Dataset:
    """Parse an IDX image file (magic 0x803) and label file (magic 0x801); gzip is accepted."""
    raw_img = _read_bytes(images_path)
    raw_lab = _read_bytes(labels_path)
    count, rows, cols = _idx_header(raw_img, IDX_IMAGE_MAGIC, 3, images_path)
    (n_labels,) = _idx_header(raw_lab, IDX_LABEL_MAGIC, 1, labels_path)
    pixels = np.frombuffer(raw_img, dtype=np.uint8, offset=16)
    labels = np.frombuffer(raw_lab, dtype=np.uint8, offset=8)
    if pixels.size < count * rows * cols:
        raise TruncatedFileError(f"{images_path}: expected {count * rows * cols} pixels, found {pixels.size}")
    if labels.size < n_labels:
        raise TruncatedFileError(f"{labels_path}: expected {n_labels} labels, found {labels.size}")
    if n_labels != count:
        raise CountMismatchError(f"{count} images but {n_labels} labels")
    inputs = pixels[: count * rows * cols].reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = labels[:n_labels]
    n_classes = 10 if class_names is None else len(class_names)
    if labels.size and labels.max() >= n_classes:
        raise LabelRangeError(f"label {labels.max()} outside [0, {n_classes})")
    names = tuple(class_names) if class_names is not None else tuple(str(i) for i in range(10))
    return Dataset(inputs, one_hot(labels, n_classes), name, names)


def load_cifar_binary(batch_paths, name: str = "cifar10") -> Dataset:
    """Concatenate CIFAR-10 binary batches of 3073-byte records (label byte + 3072 pixels)."""
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    inputs, labels = [], []
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise RecordAlignmentError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        lab = rec[:, 0]
        if lab.max() >= len(CIFAR10_CLASSES):
            raise LabelRangeError(f"{path}: label byte {lab.max()} outside [0, 10)")
        labels.append(lab)
        inputs.append(rec[:, 1:].astype(np.float64) / 255.0)
    lab = np.concatenate(labels)
    return Dataset(np.concatenate(inputs), one_hot(lab, 10), name, CIFAR10_CLASSES)


def filter_classes(ds: Dataset, keep) -> Dataset:
    """Keep rows of the listed classes; labels are re-encoded in the order of ``keep``."""
    keep = list(keep)
    if not keep:
        raise DataError("keep list is empty")
    names = list(ds.class_names) if ds.class_names else [str(i) for i in range(ds.n_classes)]
    new_index = np.full(ds.n_classes, -1)
    for pos, cls in enumerate(keep):
        if cls in names:
            new_index[names.index(cls)] = pos
        elif isinstance(cls, int) and 0 <= cls < ds.n_classes:
            new_index[cls] = pos
        else:
            raise DataError(f"unknown class {cls!r}")
    mapped = new_index[ds.class_index]
    rows = np.flatnonzero(mapped >= 0)
    kept_names = tuple(names[c] if isinstance(c, int) else c for c in keep)
    return Dataset(ds.inputs[rows], one_hot(mapped[rows], len(keep)), ds.name, kept_names)


def noisy_replacement(ds: Dataset, keep_fraction: float, sigma: float = 0.01, seed: int = 0) -> Dataset:
    """Per class, keep a random subset of originals and overwrite the rest with noisy copies of them.

    Each kept image serves as the source for floor(m/n) or ceil(m/n) of the m
    replaced rows. Row positions, dataset size and class counts are unchanged.
    Noise is not clamped to [0, 1].
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise DataError("keep_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    inputs = ds.inputs.copy()
    cls = ds.class_index
    for c in range(ds.n_classes):
        members = np.flatnonzero(cls == c)
        if members.size == 0:
            continue
        n_keep = int(round(keep_fraction * members.size))
        if n_keep == 0:
            raise DataError(f"keep_fraction {keep_fraction} keeps no samples of class {c}")
        order = rng.permutation(members.size)
        kept = members[order[:n_keep]]
        replaced = np.sort(members[order[n_keep:]])
        if replaced.size == 0:
            continue
        sources = np.resize(kept, replaced.size)
        noise = rng.normal(0.0, sigma, size=(replaced.size, inputs.shape[1]))
        inputs[replaced] = ds.inputs[sources] + noise
    return Dataset(inputs, ds.labels.copy(), ds.name, ds.class_names)


def subsample_indices(n_rows: int, count: int, seed: int) -> np.ndarray:
    if count > n_rows:
        raise DataError(f"cannot draw {count} samples from {n_rows}")
    if count < 0:
        raise DataError("count must be nonnegative")
    return np.random.default_rng(seed).choice(n_rows, size=count, replace=False)


def subsample(ds: Dataset, count: int, seed: int) -> Dataset:
    """Uniform draw without replacement."""
    return ds.take(subsample_indices(len(ds), count, seed))


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Isotropic Gaussian clusters around unit-norm centers.

    With ``modes_per_class > 1`` each class is a mixture of that many clusters,
    which makes the task nonlinear. All centers are at least ``min_angle_deg`` apart.
    """

    n_classes: int = 4
    input_dim: int = 16
    cluster_std: float = 0.3
    seed: int = 0
    modes_per_class: int = 4
    min_angle_deg: float = 30.0


def synthetic_centers(spec: SyntheticTaskSpec) -> np.ndarray:
    """Unit-norm centers, shape (n_classes * modes_per_class, input_dim); row c*modes + j is mode j of class c."""
    rng = np.random.default_rng(spec.seed)
    n_centers = spec.n_classes * spec.modes_per_class
    cos_max = np.cos(np.deg2rad(spec.min_angle_deg))
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < n_centers:
        attempts += 1
        if attempts > 100_000:
            raise DataError("could not place cluster centers with the requested separation")
        v = rng.normal(size=spec.input_dim)
        v /= np.linalg.norm(v)
        if all(np.dot(v, c) <= cos_max for c in centers):
            centers.append(v)
    return np.array(centers)


def make_synthetic(spec: SyntheticTaskSpec, count: int, sample_seed: int | None = None) -> Dataset:
    """Draw ``count`` samples, classes assigned round-robin then shuffled, modes uniformly within a class."""
    centers = synthetic_centers(spec)
    rng = np.random.default_rng(spec.seed + 1 if sample_seed is None else sample_seed)
    cls = rng.permutation(np.arange(count) % spec.n_classes)
    mode = rng.integers(0, spec.modes_per_class, size=count)
    means = centers[cls * spec.modes_per_class + mode]
    inputs = means + spec.cluster_std * rng.normal(size=(count, spec.input_dim))
    names = tuple(f"class{c}" for c in range(spec.n_classes))
    return Dataset(inputs, one_hot(cls, spec.n_classes), "synthetic", names)


def save_dataset(ds: Dataset, path) -> None:
    np.savez(path, inputs=ds.inputs, labels=ds.labels, name=np.array(ds.name), class_names=np.array(ds.class_names))


def load_dataset(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        names = tuple(str(s) for s in z["class_names"].tolist())
        return Dataset(z["inputs"], z["labels"], str(z["name"]), names)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
FASHION_CLASSES = ("t-shirt", "trouser", "pullover", "dress", "coat", "sandal", "shirt", "sneaker", "bag", "ankle-boot")


def _find(root: Path, stem: str) -> Path:
    for candidate in (root / stem, root / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise DatasetNotFoundError(root / stem)


def load_named(kind: str, split: str, root) -> Dataset:
    """Load a benchmark split from ``root`` (``mnist``, ``fashion_mnist``, ``cifar10``, ``cifar4``)."""
    root = Path(root)
    if kind in ("mnist", "fashion_mnist"):
        sub = root / kind
        base = sub if sub.exists() else root
        img, lab = MNIST_FILES[split]
        names = FASHION_CLASSES if kind == "fashion_mnist" else None
        return load_idx(_find(base, img), _find(base, lab), name=kind, class_names=names)
    if kind in ("cifar10", "cifar4"):
        sub = root / "cifar-10-batches-bin"
        base = sub if sub.exists() else root
        files = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
        ds = load_cifar_binary([_find(base, f) for f in files], name=kind)
        return filter_classes(ds, CIFAR4_CLASSES) if kind == "cifar4" else ds
    raise DataError(f"unknown dataset kind {kind!r}")
