"""Patch extraction, average-patch matrices and patch PCA.

Images are ``(c, h, w)`` float arrays. A patch is flattened channel-major,
then row-major inside each channel: ``index = ch * k * k + r * k + col``.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .linalg import fix_signs, symmetric_eig

POPULATIONS = ("all_patches", "avg_patch_rows")
EIG_CLAMP = 1e-12


@dataclass
class PatchMatrix:
    rows: np.ndarray
    c: int
    k: int
    stride: int = 1

    @property
    def d(self):
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]


@dataclass
class AvgPatchMatrix:
    """N x d matrix whose i-th row is the mean patch of image ``image_index[i]``."""

    K: np.ndarray
    image_index: np.ndarray = None
    c: int = None
    k: int = None
    stride: int = 1

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64)
        if self.K.ndim != 2:
            raise ValueError(f"K must be 2-D, got shape {self.K.shape}")
        if self.image_index is None:
            self.image_index = np.arange(self.K.shape[0])

    @property
    def N(self):
        return self.K.shape[0]

    @property
    def d(self):
        return self.K.shape[1]


@dataclass
class PcaBasis:
    U: np.ndarray
    eigenvalues: np.ndarray
    centered: bool
    mean_vector: np.ndarray
    population: str = "all_patches"
    c: int = None
    k: int = None

    @property
    def d(self):
        return self.U.shape[0]

    def to_dict(self):
        return {
            "version": 1,
            "c": self.c,
            "k": self.k,
            "centered": bool(self.centered),
            "population": self.population,
            "mean_vector": [float(x) for x in self.mean_vector],
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "U": [float(x) for x in np.asarray(self.U).ravel(order="C")],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, obj):
        if obj.get("version") != 1:
            raise ValueError(f"unsupported PCA basis version {obj.get('version')!r}")
        ev = np.asarray(obj["eigenvalues"], dtype=np.float64)
        d = ev.size
        U = np.asarray(obj["U"], dtype=np.float64)
        if U.size != d * d:
            raise ValueError(f"U has {U.size} entries, expected {d * d}")
        return cls(
            U=U.reshape(d, d),
            eigenvalues=ev,
            centered=bool(obj["centered"]),
            mean_vector=np.asarray(obj["mean_vector"], dtype=np.float64),
            population=obj.get("population", "all_patches"),
            c=obj.get("c"),
            k=obj.get("k"),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def fingerprint(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass
class PatchStats:
    sigma_diag: np.ndarray
    mu_hat: np.ndarray
    N: int
    offdiag_max: float = 0.0
    scatter: np.ndarray = field(default=None, repr=False)

    @property
    def mu_norm_sq(self):
        return float(self.mu_hat @ self.mu_hat)


def _as_image(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3:
        raise ValueError(f"image must be (c, h, w) or (h, w), got shape {image.shape}")
    return image


def _check_geometry(h, w, k, stride):
    if k < 1 or stride < 1:
        raise ValueError(f"patch size and stride must be >= 1 (k={k}, stride={stride})")
    if k > min(h, w):
        raise ValueError(f"patch size {k} exceeds image dims {h}x{w}")


def patch_count(h, w, k, stride=1):
    return ((h - k) // stride + 1) * ((w - k) // stride + 1)


def _patch_rows(images, k, stride):
    """(n, c, h, w) -> (n, n_patches, c*k*k) in row-major corner order."""
    n, c, h, w = images.shape
    win = sliding_window_view(images, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: (n, c, ph, pw, k, k) -> (n, ph, pw, c, k, k)
    win = win.transpose(0, 2, 3, 1, 4, 5)
    return win.reshape(n, -1, c * k * k)


def extract_patches(image, k, stride=1):
    """All k x k patches of one image, top-left corners enumerated row-major."""
    image = _as_image(image)
    c, h, w = image.shape
    _check_geometry(h, w, k, stride)
    rows = _patch_rows(image[None], k, stride)[0]
    return PatchMatrix(np.ascontiguousarray(rows), c=c, k=k, stride=stride)


def extract_patches_many(images, k, stride=1):
    images = np.asarray(images, dtype=np.float64)
    n, c, h, w = images.shape
    _check_geometry(h, w, k, stride)
    rows = _patch_rows(images, k, stride).reshape(-1, c * k * k)
    return PatchMatrix(np.ascontiguousarray(rows), c=c, k=k, stride=stride)


def average_patch(image, k, stride=1):
    return extract_patches(image, k, stride).rows.mean(axis=0)


def build_avg_patch_matrix(images, k, stride=1, chunk=2048):
    """Stack per-image average patches in dataset order."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ValueError(f"images must be (n, c, h, w), got shape {images.shape}")
    n, c, h, w = images.shape
    _check_geometry(h, w, k, stride)
    out = np.empty((n, c * k * k))
    for lo in range(0, n, chunk):
        out[lo:lo + chunk] = _patch_rows(images[lo:lo + chunk], k, stride).mean(axis=1)
    return AvgPatchMatrix(out, np.arange(n), c=c, k=k, stride=stride)


def patch_moments(images, k, stride=1, chunk=256, threads=1, sample_count=None, seed=0):
    """Accumulate (count, sum, sum of outer products) over all patches.

    Chunks may be processed by a thread pool; partial sums are combined in
    chunk order so the result does not depend on ``threads``. With
    ``sample_count`` a seeded uniform subset of patches is used instead.
    """
    images = np.asarray(images)
    n, c, h, w = images.shape
    _check_geometry(h, w, k, stride)
    d = c * k * k
    if sample_count is not None:
        per = patch_count(h, w, k, stride)
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(n * per, size=min(sample_count, n * per), replace=False))
        img_idx, patch_idx = np.divmod(picks, per)
        rows = np.empty((picks.size, d))
        for i in np.unique(img_idx):
            sel = img_idx == i
            rows[sel] = _patch_rows(np.asarray(images[i:i + 1], dtype=np.float64), k, stride)[0][patch_idx[sel]]
        return rows.shape[0], rows.sum(axis=0), rows.T @ rows

    def work(lo):
        rows = _patch_rows(np.asarray(images[lo:lo + chunk], dtype=np.float64), k, stride).reshape(-1, d)
        return rows.shape[0], rows.sum(axis=0), rows.T @ rows

    starts = range(0, n, chunk)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(lo) for lo in starts]
    count = 0
    total = np.zeros(d)
    outer = np.zeros((d, d))
    for cnt, s, o in parts:
        count += cnt
        total += s
        outer += o
    return count, total, outer


def _basis_from_moment(moment, centered, mean, population, c, k):
    vals, vecs = symmetric_eig(moment)
    vals = np.where((vals < 0.0) & (vals >= -EIG_CLAMP), 0.0, vals)
    return PcaBasis(fix_signs(vecs), vals, centered, mean, population, c, k)


def fit_pca(rows, centered=True, population="all_patches", c=None, k=None):
    """PCA of a row matrix: eigendecomposition of (1/n) X^T X.

    ``X`` is the row matrix, mean-centered first when ``centered``.
    """
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("fit_pca needs a 2-D matrix with at least 2 rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("fit_pca input contains non-finite values")
    if population not in POPULATIONS:
        raise ValueError(f"population must be one of {POPULATIONS}")
    mean = X.mean(axis=0) if centered else np.zeros(X.shape[1])
    Xc = X - mean if centered else X
    moment = (Xc.T @ Xc) / X.shape[0]
    return _basis_from_moment(moment, centered, mean, population, c, k)


def fit_pca_from_moments(count, total, outer, centered=True, population="all_patches", c=None, k=None):
    if count < 2:
        raise ValueError("need at least 2 patches")
    if not (np.all(np.isfinite(total)) and np.all(np.isfinite(outer))):
        raise ValueError("non-finite patch moments")
    moment = outer / count
    mean = total / count
    if centered:
        moment = moment - np.outer(mean, mean)
    else:
        mean = np.zeros_like(mean)
    return _basis_from_moment(moment, centered, mean, population, c, k)


def to_pca(K, basis):
    """Rotate rows into the PCA basis: K @ U (no centering of K)."""
    K = K.K if isinstance(K, AvgPatchMatrix) else np.asarray(K, dtype=np.float64)
    U = basis.U if isinstance(basis, PcaBasis) else np.asarray(basis)
    if K.shape[-1] != U.shape[0]:
        raise ValueError(f"dimension mismatch: K has d={K.shape[-1]}, basis has d={U.shape[0]}")
    return K @ U


def from_pca(K_tilde, basis):
    U = basis.U if isinstance(basis, PcaBasis) else np.asarray(basis)
    return np.asarray(K_tilde) @ U.T


def second_moment_stats(K_tilde):
    """Split K~^T K~ into diagonal centered scatter plus mu_hat mu_hat^T.

    ``mu_hat`` carries a sqrt(N) factor so the identity holds with the
    unnormalized scatter. Off-diagonal scatter is reported, not dropped.
    """
    Kt = np.asarray(K_tilde, dtype=np.float64)
    N = Kt.shape[0]
    mean = Kt.mean(axis=0)
    C = Kt - mean
    scatter = C.T @ C
    off = scatter - np.diag(np.diag(scatter))
    return PatchStats(
        sigma_diag=np.clip(np.diag(scatter).copy(), 0.0, None),
        mu_hat=np.sqrt(N) * mean,
        N=N,
        offdiag_max=float(np.abs(off).max()) if off.size else 0.0,
        scatter=scatter,
    )


def class_average_patch(K, y, cls):
    K = K.K if isinstance(K, AvgPatchMatrix) else np.asarray(K, dtype=np.float64)
    sel = np.asarray(y) == cls
    if not sel.any():
        raise ValueError(f"class {cls} has no rows")
    return K[sel].mean(axis=0)
