"""Energy profiles of filter banks and patch-distance comparisons.

A filter bank is viewed as the linear map ``x -> F x`` on flattened patches.
Its energy along PCA direction ``u_i`` is either the norm ``||F u_i||``
("rms") or the mean square ``||F u_i||^2 / M`` ("mean_square").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import pearson
from .patch_engine import PatchMatrix, PcaBasis

VARIANTS = ("rms", "mean_square")


def infer_geometry(d):
    """Guess (channels, kernel size) for a flattened patch length."""
    for c in (3, 1):
        if d % c == 0:
            k = int(round(np.sqrt(d // c)))
            if k * k * c == d:
                return c, k
    return d, 1


@dataclass
class FilterBank:
    F: np.ndarray
    sigma_init: float = None
    c: int = None
    k: int = None

    def __post_init__(self):
        self.F = np.atleast_2d(np.asarray(self.F, dtype=np.float64))
        if self.F.shape[0] < 1:
            raise ValueError("empty filter bank")
        if not np.all(np.isfinite(self.F)):
            raise ValueError("filter bank contains non-finite values")
        if self.c is None or self.k is None:
            self.c, self.k = infer_geometry(self.F.shape[1])

    @property
    def M(self):
        return self.F.shape[0]

    @property
    def d(self):
        return self.F.shape[1]


@dataclass
class EnergyProfile:
    e: np.ndarray
    variant: str
    basis_fingerprint: str = None
    eigenvalues: np.ndarray = None

    def __len__(self):
        return self.e.size


def _bank_matrix(bank):
    return bank.F if isinstance(bank, FilterBank) else np.atleast_2d(np.asarray(bank, dtype=np.float64))


def energy_profile(bank, basis, variant="rms"):
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    F = _bank_matrix(bank)
    U = basis.U if isinstance(basis, PcaBasis) else np.asarray(basis, dtype=np.float64)
    if F.shape[1] != U.shape[0]:
        raise ValueError(f"dimension mismatch: filters have d={F.shape[1]}, basis has d={U.shape[0]}")
    proj = F @ U
    sq = np.sum(proj * proj, axis=0)
    e = np.sqrt(sq) if variant == "rms" else sq / F.shape[0]
    if isinstance(basis, PcaBasis):
        return EnergyProfile(e, variant, basis.fingerprint(), basis.eigenvalues.copy())
    return EnergyProfile(e, variant)


def subtract_init(bank, init_bank):
    """Filter-wise difference between a trained bank and its initialization."""
    F, F0 = _bank_matrix(bank), _bank_matrix(init_bank)
    if F.shape != F0.shape:
        raise ValueError(f"bank shapes differ: {F.shape} vs {F0.shape}")
    return FilterBank(F - F0, c=getattr(bank, "c", None), k=getattr(bank, "k", None))


def profile_correlation(e1, e2):
    """Pearson correlation of two profiles of the same variant."""
    if isinstance(e1, EnergyProfile) and isinstance(e2, EnergyProfile):
        if e1.variant != e2.variant:
            raise ValueError(f"refusing to correlate a {e1.variant} profile with a {e2.variant} profile")
    a = e1.e if isinstance(e1, EnergyProfile) else e1
    b = e2.e if isinstance(e2, EnergyProfile) else e2
    return pearson(a, b)


@dataclass
class PairDistances:
    pairs: np.ndarray
    input_dist: np.ndarray
    mapped_dist: np.ndarray
    correlation: float


def sample_pairs(n, n_pairs, seed):
    """Uniform index pairs with distinct members; pairs themselves may repeat.

    Stream: ``numpy.random.default_rng(seed)``; first index drawn from
    ``[0, n)``, second from ``[0, n - 1)`` and shifted past the first.
    """
    if n < 2:
        raise ValueError("need at least 2 patches to form pairs")
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=n_pairs)
    j = rng.integers(0, n - 1, size=n_pairs)
    j = j + (j >= i)
    return np.stack([i, j], axis=1)


def pair_distances(patches, bank, n_pairs, seed=0, reference=None):
    """Distances between sampled patch pairs before and after a filter bank.

    ``reference`` (another bank) replaces raw pixel distance on the input side,
    which gives the bank-vs-bank comparison.
    """
    X = patches.rows if isinstance(patches, PatchMatrix) else np.asarray(patches, dtype=np.float64)
    F = _bank_matrix(bank)
    if F.shape[1] != X.shape[1]:
        raise ValueError(f"dimension mismatch: patches d={X.shape[1]}, filters d={F.shape[1]}")
    pairs = sample_pairs(X.shape[0], n_pairs, seed)
    diff = X[pairs[:, 0]] - X[pairs[:, 1]]
    if reference is not None:
        R = _bank_matrix(reference)
        if R.shape[1] != X.shape[1]:
            raise ValueError("reference bank has the wrong patch dimension")
        input_dist = np.linalg.norm(diff @ R.T, axis=1)
    else:
        input_dist = np.linalg.norm(diff, axis=1)
    mapped_dist = np.linalg.norm(diff @ F.T, axis=1)
    try:
        corr = pearson(input_dist, mapped_dist)
    except ValueError:
        corr = float("nan")
    return PairDistances(pairs, input_dist, mapped_dist, corr)
