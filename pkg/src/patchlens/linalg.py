"""Symmetric eigensolver and small linear-algebra helpers.

The eigensolver is a cyclic Jacobi method using round-robin (parallel)
ordering, so each step rotates ``n // 2`` disjoint index pairs at once with
vectorized numpy updates. Results are deterministic for a given input.
"""

from __future__ import annotations

import numpy as np

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
# above this size the O(n^3)-per-sweep python loop gets slow; use LAPACK
JACOBI_MAX_DIM = 512


def _round_robin(n):
    """Pairings for one cyclic sweep: n-1 rounds of disjoint (p, q) pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a >= n or b >= n:
                continue
            ps.append(min(a, b))
            qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` unsorted, eigenvectors as columns.
    Converged when the off-diagonal Frobenius norm drops below
    ``tol * ||a||_F``.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n < 2:
        return np.diag(a).copy(), v
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    rounds = _round_robin(n)
    offmask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a[offmask] ** 2))
        if off < tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            app = a[p, p]
            aqq = a[q, q]
            with np.errstate(divide="ignore", invalid="ignore"):
                theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
            big = np.abs(theta) > 1e150
            sgn = np.where(theta >= 0.0, 1.0, -1.0)
            safe = np.where(big, 0.0, theta)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0),
                         sgn / (np.abs(safe) + np.sqrt(safe * safe + 1.0)))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            cp = a[:, p]
            cq = a[:, q]
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            rp = a[p, :]
            rq = a[q, :]
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            # rotation zeroes these exactly in exact arithmetic
            a[p, q] = 0.0
            a[q, p] = 0.0

            vp = v[:, p]
            vq = v[:, q]
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
    return np.diag(a).copy(), v


def symmetric_eig(a, method="auto"):
    """Eigenpairs of a symmetric matrix sorted by descending eigenvalue.

    ``method`` is ``"jacobi"``, ``"lapack"`` or ``"auto"`` (Jacobi up to
    ``JACOBI_MAX_DIM``). The sort is stable, so ties keep solver order.
    """
    a = np.asarray(a, dtype=np.float64)
    if method == "auto":
        method = "jacobi" if a.shape[0] <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        vals, vecs = jacobi_eigh(a)
    elif method == "lapack":
        vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


def fix_signs(vecs):
    """Flip columns so the largest-magnitude entry is positive (first wins ties)."""
    vecs = np.array(vecs, dtype=np.float64, copy=True)
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def range_projector_basis(gram, rel_cutoff=1e-10):
    """Orthonormal basis (columns) for the range of a PSD Gram matrix.

    Eigenvalues below ``rel_cutoff * lambda_max`` count as zero. Returns
    ``(basis, kept_eigenvalues)``.
    """
    vals, vecs = symmetric_eig(gram)
    if vals.size == 0 or vals[0] <= 0.0:
        return vecs[:, :0], vals[:0]
    keep = vals > rel_cutoff * vals[0]
    return vecs[:, keep], vals[keep]


def pearson(x, y):
    """Pearson correlation; raises ``ValueError`` on a zero-variance input."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("need at least two values for a correlation")
    xc = x - x.mean()
    yc = y - y.mean()
    nx = np.sqrt(xc @ xc)
    ny = np.sqrt(yc @ yc)
    if nx == 0.0 or ny == 0.0:
        raise ValueError("zero variance profile")
    return float(np.clip((xc @ yc) / (nx * ny), -1.0, 1.0))
