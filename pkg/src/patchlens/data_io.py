"""Dataset ingestion, synthetic datasets, label sources and CSV interchange."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .patch_engine import AvgPatchMatrix, PcaBasis, build_avg_patch_matrix
from .profile import FilterBank

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)
CIFAR_RECORD = 3073
CIFAR_SIDE = 32

FILTER_MAGIC = "patchlens-filters v1"
AVGPATCH_MAGIC = "patchlens-avgpatch v1"


class FormatError(ValueError):
    """Malformed input file."""


def atomic_write(path, data):
    """Write text or bytes via a temp file in the target dir, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "\n", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class LabeledImageSet:
    images: np.ndarray  # (n, c, h, w) float64
    labels: np.ndarray
    class_names: tuple = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (n, c, h, w), got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("labels length must equal number of images")

    def __len__(self):
        return self.images.shape[0]


@dataclass
class BinaryDataset:
    """Two-class dataset; holds raw images, an average-patch matrix, or both."""

    y: np.ndarray
    K: AvgPatchMatrix = None
    images: np.ndarray = None
    class_ids: tuple = (0, 1)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("binary labels must be 0 or 1")

    @property
    def balance(self):
        return int(np.sum(self.y == 0)), int(np.sum(self.y == 1))

    @property
    def balanced(self):
        a, b = self.balance
        return abs(a - b) <= 1

    def with_avg_patches(self, k, stride=1):
        if self.images is None:
            raise ValueError("dataset has no images to patch")
        return BinaryDataset(self.y, build_avg_patch_matrix(self.images, k, stride), self.images, self.class_ids)


def load_cifar10_batch(path, scale=True):
    """Decode one CIFAR-10 binary batch (1 label byte + 3072 pixel bytes per record)."""
    raw = np.fromfile(path, dtype=np.uint8)
    return decode_cifar10_bytes(raw, scale=scale)


def decode_cifar10_bytes(raw, scale=True):
    raw = np.frombuffer(raw, dtype=np.uint8) if isinstance(raw, (bytes, bytearray)) else np.asarray(raw, dtype=np.uint8)
    n, rem = divmod(raw.size, CIFAR_RECORD)
    if rem:
        raise FormatError(f"truncated CIFAR-10 record at byte offset {n * CIFAR_RECORD} "
                          f"({rem} of {CIFAR_RECORD} bytes present)")
    recs = raw.reshape(n, CIFAR_RECORD)
    labels = recs[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"label byte {labels[i]} > 9 at byte offset {i * CIFAR_RECORD}")
    images = recs[:, 1:].reshape(n, 3, CIFAR_SIDE, CIFAR_SIDE).astype(np.float64)
    if scale:
        images /= 255.0
    return LabeledImageSet(images, labels, CIFAR10_CLASSES)


def encode_cifar10_bytes(images, labels):
    """Inverse of the decoder for uint8 images shaped (n, 3, 32, 32)."""
    images = np.asarray(images)
    if images.dtype != np.uint8 or images.shape[1:] != (3, CIFAR_SIDE, CIFAR_SIDE):
        raise ValueError("expected uint8 images of shape (n, 3, 32, 32)")
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    return np.concatenate([labels, images.reshape(images.shape[0], -1)], axis=1).tobytes()


def load_cifar10(paths, scale=True):
    sets = [load_cifar10_batch(p, scale=scale) for p in paths]
    if not sets:
        raise ValueError("no CIFAR-10 batch files given")
    return LabeledImageSet(np.concatenate([s.images for s in sets]),
                           np.concatenate([s.labels for s in sets]), CIFAR10_CLASSES)


def cifar_train_paths(root):
    root = Path(root)
    for sub in (root, root / "cifar-10-batches-bin"):
        found = sorted(sub.glob("data_batch_*.bin"))
        if found:
            return found
    return []


def make_binary_subset(dataset, class_a, class_b):
    """class_a -> y=0 block first, then class_b -> y=1, original order kept."""
    if class_a == class_b:
        raise ValueError(f"classes must differ (both are {class_a})")
    blocks = []
    for cls in (class_a, class_b):
        sel = np.nonzero(dataset.labels == cls)[0]
        if sel.size == 0:
            name = dataset.class_names[cls] if dataset.class_names and 0 <= cls < len(dataset.class_names) else cls
            raise ValueError(f"class {name!r} has no images")
        blocks.append(sel)
    idx = np.concatenate(blocks)
    y = np.concatenate([np.zeros(blocks[0].size), np.ones(blocks[1].size)])
    return BinaryDataset(y, images=dataset.images[idx], class_ids=(class_a, class_b))


def gen_shared_mean_dataset(n_per_class, d, spread, seed, base=0.5):
    """Balanced synthetic average-patch rows whose class means coincide exactly.

    Class 1 is drawn independently, then translated onto class 0's empirical
    mean.
    """
    if n_per_class < 1 or d < 1:
        raise ValueError("n_per_class and d must be >= 1")
    if not spread > 0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(seed)
    a = base + spread * rng.standard_normal((n_per_class, d))
    b = base + spread * rng.standard_normal((n_per_class, d))
    b = b - b.mean(axis=0) + a.mean(axis=0)
    K = np.concatenate([a, b])
    y = np.concatenate([np.zeros(n_per_class), np.ones(n_per_class)])
    return BinaryDataset(y, AvgPatchMatrix(K))


def shift_class_mean(K, y, basis, dir_index, epsilon):
    """Add epsilon * u_dir to every y=1 row (pixel basis)."""
    U = basis.U if isinstance(basis, PcaBasis) else np.asarray(basis)
    Kin = K.K if isinstance(K, AvgPatchMatrix) else np.asarray(K, dtype=np.float64)
    if not 0 <= dir_index < U.shape[1]:
        raise ValueError(f"direction index {dir_index} out of range [0, {U.shape[1]})")
    out = Kin.copy()
    if epsilon != 0:
        sel = np.asarray(y) == 1
        out[sel] += epsilon * U[:, dir_index]
    if isinstance(K, AvgPatchMatrix):
        return AvgPatchMatrix(out, K.image_index.copy(), K.c, K.k, K.stride)
    return out


@dataclass(frozen=True)
class LabelSource:
    kind: str = "true"
    seed: int = 0
    labels: tuple = None

    def __post_init__(self):
        if self.kind not in ("true", "bernoulli", "expectation"):
            raise ValueError(f"unknown label source {self.kind!r}")


def make_labels(source, n):
    if n < 1:
        raise ValueError("n must be >= 1")
    if source.kind == "expectation":
        return np.full(n, 0.5)
    if source.kind == "bernoulli":
        return np.random.default_rng(source.seed).integers(0, 2, size=n).astype(np.float64)
    if source.labels is None:
        raise ValueError("true label source carries no labels")
    y = np.asarray(source.labels, dtype=np.float64)
    if y.size != n:
        raise ValueError(f"label source has {y.size} labels, expected {n}")
    return y.copy()


def _fmt(x):
    return format(float(x), ".17g")


def export_filter_bank(bank, path):
    F = bank.F if isinstance(bank, FilterBank) else np.asarray(bank, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] == 0:
        raise ValueError("empty filter bank")
    if not np.all(np.isfinite(F)):
        raise ValueError("filter bank contains non-finite values")
    fb = bank if isinstance(bank, FilterBank) else FilterBank(F)
    c, k = fb.c, fb.k
    lines = [FILTER_MAGIC, f"{F.shape[0]},{F.shape[1]},{c},{k}"]
    lines += [",".join(_fmt(x) for x in row) for row in F]
    atomic_write(path, "\n".join(lines) + "\n")


def _parse_floats(cells, lineno, path):
    try:
        vals = [float(x) for x in cells]
    except ValueError:
        raise FormatError(f"{path}: line {lineno}: non-numeric cell") from None
    if not all(np.isfinite(vals)):
        raise FormatError(f"{path}: line {lineno}: non-finite value")
    return vals


def import_filter_bank(path):
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != FILTER_MAGIC:
        raise FormatError(f"{path}: line 1: expected header {FILTER_MAGIC!r}")
    if len(lines) < 2:
        raise FormatError(f"{path}: line 2: missing M,d,c,k header")
    try:
        M, d, c, k = (int(x) for x in lines[1].split(","))
    except ValueError:
        raise FormatError(f"{path}: line 2: malformed M,d,c,k header") from None
    if M == 0:
        raise FormatError(f"{path}: empty filter bank")
    if c * k * k != d:
        raise FormatError(f"{path}: line 2: c*k*k = {c * k * k} does not match d = {d}")
    rows = lines[2:]
    if len(rows) != M:
        raise FormatError(f"{path}: header declares {M} rows, found {len(rows)}")
    F = np.empty((M, d))
    for i, line in enumerate(rows):
        cells = line.split(",")
        if len(cells) != d:
            raise FormatError(f"{path}: line {i + 3}: expected {d} values, found {len(cells)}")
        F[i] = _parse_floats(cells, i + 3, path)
    return FilterBank(F, c=c, k=k)


def write_avg_patch_csv(K, y, path):
    """Average-patch matrix with labels: magic line, ``N,d``, rows ``label,v0,...``."""
    Km = K.K if isinstance(K, AvgPatchMatrix) else np.asarray(K, dtype=np.float64)
    y = np.full(Km.shape[0], -1) if y is None else np.asarray(y)
    lines = [AVGPATCH_MAGIC, f"{Km.shape[0]},{Km.shape[1]}"]
    lines += [f"{int(lab)}," + ",".join(_fmt(x) for x in row) for lab, row in zip(y, Km)]
    atomic_write(path, "\n".join(lines) + "\n")


def read_avg_patch_csv(path):
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != AVGPATCH_MAGIC:
        raise FormatError(f"{path}: line 1: expected header {AVGPATCH_MAGIC!r}")
    try:
        N, d = (int(x) for x in lines[1].split(","))
    except (ValueError, IndexError):
        raise FormatError(f"{path}: line 2: malformed N,d header") from None
    rows = lines[2:]
    if len(rows) != N:
        raise FormatError(f"{path}: header declares {N} rows, found {len(rows)}")
    K = np.empty((N, d))
    y = np.empty(N)
    for i, line in enumerate(rows):
        cells = line.split(",")
        if len(cells) != d + 1:
            raise FormatError(f"{path}: line {i + 3}: expected {d + 1} cells, found {len(cells)}")
        vals = _parse_floats(cells, i + 3, path)
        y[i] = vals[0]
        K[i] = vals[1:]
    return AvgPatchMatrix(K), y
