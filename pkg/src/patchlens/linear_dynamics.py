"""Full-batch gradient descent on the average-patch regression.

A single-hidden-layer linear CNN with global average pooling and MSE loss
reduces to linear regression of the label on each image's average patch,
with the average filter as the weight vector. This module simulates that
regression exactly; it is the reference the closed forms are checked against.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data_io import LabelSource, make_labels
from .linalg import range_projector_basis
from .patch_engine import PatchMatrix
from .profile import FilterBank

LOSS_SCALES = ("unnormalized", "one_over_N")


class DivergenceError(ArithmeticError):
    pass


@dataclass
class GDConfig:
    eta: float = 0.1
    steps: int = 100
    width: int = 1
    sigma_init: float = 0.0
    seed: int = 0
    loss_scale: str = "unnormalized"

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if self.sigma_init < 0:
            raise ValueError("sigma_init must be >= 0")
        if self.loss_scale not in LOSS_SCALES:
            raise ValueError(f"loss_scale must be one of {LOSS_SCALES}")


@dataclass
class Trajectory:
    iterations: list
    banks: list
    warnings: list = field(default_factory=list)

    @property
    def average_filters(self):
        return [F.mean(axis=0) for F in self.banks]

    @property
    def dispersions(self):
        return [F.var(axis=0) for F in self.banks]

    @property
    def final(self):
        return self.banks[-1]

    def snapshot(self, iteration):
        return FilterBank(self.banks[self.iterations.index(iteration)])

    def to_csv(self):
        lines = ["iter,coord,avg_filter_value,dispersion"]
        for it, wbar, disp in zip(self.iterations, self.average_filters, self.dispersions):
            lines += [f"{it},{j},{wbar[j]:.17g},{disp[j]:.17g}" for j in range(wbar.size)]
        return "\n".join(lines) + "\n"


def _grad(w, K, y, loss_scale):
    g = K.T @ (K @ w - y)
    if loss_scale == "one_over_N":
        g = g / K.shape[0]
    return g


def gd_step(w, K, y, eta, loss_scale="unnormalized"):
    """One GD step on 1/2 ||Kw - y||^2 (divided by N for ``one_over_N``).

    ``w`` and ``y`` may carry a trailing column axis to run several label
    vectors at once.
    """
    return w - eta * _grad(w, K, y, loss_scale)


def stability_margin(K, eta, loss_scale="unnormalized"):
    """max |1 - eta*lambda| over the spectrum of K^T K (scaled like the loss)."""
    H = K.T @ K
    if loss_scale == "one_over_N":
        H = H / K.shape[0]
    lam = np.linalg.eigvalsh(H)
    return float(np.max(np.abs(1.0 - eta * lam)))


def _stability_warnings(K, eta, loss_scale):
    margin = stability_margin(K, eta, loss_scale)
    if margin >= 1.0 + 1e-12:
        msg = f"unstable step size: max|1 - eta*lambda| = {margin:.6g} >= 1"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return [msg]
    return []


def _snapshot_set(snapshots, steps):
    if snapshots is None:
        return {0, steps}
    if isinstance(snapshots, str):
        if snapshots != "all":
            raise ValueError(f"snapshots must be a list of iterations or 'all', got {snapshots!r}")
        return set(range(steps + 1))
    wanted = {int(s) for s in snapshots if 0 <= int(s) <= steps}
    return wanted | {0, steps}


def _iterate(F, K, y, eta, steps, keep, loss_scale):
    """Shared loop: every row of F gets the gradient taken at the mean row."""
    iterations, banks = [], []
    if 0 in keep:
        iterations.append(0)
        banks.append(F.copy())
    for t in range(1, steps + 1):
        wbar = F[0] if F.shape[0] == 1 else F.mean(axis=0)
        F = F - eta * _grad(wbar, K, y, loss_scale)
        if not np.all(np.isfinite(F)):
            raise DivergenceError(f"non-finite filter values at iteration {t}")
        if t in keep:
            iterations.append(t)
            banks.append(F.copy())
    return iterations, banks


def gd_run(K, y, eta, steps, w0=None, snapshots=None, loss_scale="unnormalized"):
    """Single-filter GD from ``w0`` (zero by default)."""
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if loss_scale not in LOSS_SCALES:
        raise ValueError(f"loss_scale must be one of {LOSS_SCALES}")
    if K.shape[0] != y.shape[0]:
        raise ValueError(f"K has {K.shape[0]} rows but y has {y.shape[0]} entries")
    w = np.zeros(K.shape[1]) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    warns = _stability_warnings(K, eta, loss_scale)
    its, banks = _iterate(w[None, :], K, y, eta, steps, _snapshot_set(snapshots, steps), loss_scale)
    return Trajectory(its, banks, warns)


def init_filters(d, config):
    rng = np.random.default_rng(config.seed)
    if config.sigma_init == 0:
        return np.zeros((config.width, d))
    return config.sigma_init * rng.standard_normal((config.width, d))


def multi_filter_run(K, y, config, snapshots=None, F0=None):
    """M filters trained through the loss on their average filter.

    Each filter receives the gradient taken with respect to the average
    filter, so the average follows single-filter GD and every deviation from
    the mean is frozen at its initial value.
    """
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    F = init_filters(K.shape[1], config) if F0 is None else np.array(F0, dtype=np.float64)
    warns = _stability_warnings(K, config.eta, config.loss_scale)
    its, banks = _iterate(F, K, y, config.eta, config.steps,
                          _snapshot_set(snapshots, config.steps), config.loss_scale)
    return Trajectory(its, banks, warns)


def dispersion_in_basis(F, U):
    """Per-coordinate population variance of the filters after rotation by U."""
    F = F.F if isinstance(F, FilterBank) else np.atleast_2d(F)
    return (F @ U).var(axis=0)


def gd_final_batch(K, Y, eta, steps, loss_scale="unnormalized"):
    """Final GD iterate from zero for each column of Y (shape N x R) -> d x R."""
    K = np.asarray(K, dtype=np.float64)
    W = np.zeros((K.shape[1], Y.shape[1]))
    for t in range(1, steps + 1):
        W = gd_step(W, K, Y, eta, loss_scale)
        if not np.all(np.isfinite(W)):
            raise DivergenceError(f"non-finite filter values at iteration {t}")
    return W


@dataclass
class MonteCarloResult:
    mean: np.ndarray
    std: np.ndarray
    draws: int

    @property
    def stderr(self):
        return self.std / np.sqrt(self.draws)


def random_label_average(K, eta, steps, draws, seed, loss_scale="one_over_N", batch=500):
    """Average GD solution over Bernoulli(1/2) label draws; draw r uses seed + r."""
    K = np.asarray(K, dtype=np.float64)
    N = K.shape[0]
    parts = []
    for lo in range(0, draws, batch):
        cols = [make_labels(LabelSource("bernoulli", seed + r), N) for r in range(lo, min(draws, lo + batch))]
        parts.append(gd_final_batch(K, np.stack(cols, axis=1), eta, steps, loss_scale))
    W = np.concatenate(parts, axis=1)
    return MonteCarloResult(W.mean(axis=1), W.std(axis=1, ddof=1 if draws > 1 else 0), draws)


def _patch_rows(patches):
    return patches.rows if isinstance(patches, PatchMatrix) else np.asarray(patches, dtype=np.float64)


def patch_span_residual(f, patches):
    """Distance from f to the row space of the patch matrix.

    ``f`` may be a single vector or an (M, d) stack, giving M residuals.
    """
    P = _patch_rows(patches)
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != P.shape[1]:
        raise ValueError(f"dimension mismatch: f has {f.shape[-1]}, patches have d={P.shape[1]}")
    V, _ = range_projector_basis(P.T @ P)
    resid = f - (f @ V) @ V.T
    if f.ndim == 1:
        return float(np.linalg.norm(resid))
    return np.linalg.norm(resid, axis=-1)


@dataclass
class PatchWeights:
    delta: np.ndarray
    reconstruction_error: float


def patch_weight_decomposition(f, patches):
    """Minimum-norm patch weights delta with P^T delta closest to f."""
    P = _patch_rows(patches)
    f = np.asarray(f, dtype=np.float64)
    if f.size != P.shape[1]:
        raise ValueError(f"dimension mismatch: f has {f.size}, patches have d={P.shape[1]}")
    V, lam = range_projector_basis(P.T @ P)
    delta = P @ (V @ ((V.T @ f) / lam))
    return PatchWeights(delta, float(np.linalg.norm(P.T @ delta - f)))
