"""Closed-form GD solutions, the implicit ridge regularizer and label predictions.

All solutions live in the PCA basis: ``K_tilde = K @ U``. GD from zero on
``1/2 ||K_tilde w - y||^2`` after ``t`` steps of size ``eta`` is
``w_t = Q g(L) Q^T K_tilde^T y`` where ``K_tilde^T K_tilde = Q L Q^T`` and
``g(l) = (1 - (1 - eta*l)^t) / l`` (``g(0) = eta*t``).

Writing ``K_tilde^T K_tilde = Sigma + mu mu^T`` (diagonal centered scatter
plus a rank-one mean term), the same iterate has a diagonal-plus-rank-one
form that is exact when ``mu`` lies along one PCA axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .linalg import pearson, symmetric_eig
from .patch_engine import second_moment_stats
from .profile import EnergyProfile

METHODS = ("paper_closed_form", "exact_eigen", "ridge", "woodbury_expectation")


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass
class ABDiagonals:
    a: np.ndarray
    b: np.ndarray
    eta: float
    t: int
    mu_norm_sq: float


@dataclass
class LambdaMatrix:
    Lambda: np.ndarray
    cond: float


@dataclass
class AnalyticSolution:
    w_tilde: np.ndarray
    method: str
    eta: float = None
    t: int = None
    sigma: float = None
    diagnostics: dict = field(default_factory=dict)


def _effective_eta(eta, N, loss_scale):
    if loss_scale == "unnormalized":
        return eta
    if loss_scale == "one_over_N":
        return eta / N
    raise ValueError(f"unknown loss_scale {loss_scale!r}")


def geometric_gain(lam, eta, t):
    """g(l) = eta * sum_{j<t} (1 - eta*l)^j, elementwise, with g(0) = eta*t."""
    lam = np.asarray(lam, dtype=np.float64)
    x = eta * lam
    out = np.empty_like(lam)
    small = np.abs(x) < 0.5
    # (1-x)^t - 1 via expm1/log1p keeps precision for small eta*lam and large t
    with np.errstate(divide="ignore", invalid="ignore"):
        pw_small = np.expm1(t * np.log1p(-x[small]))
        pw_big = np.power(1.0 - x[~small], t) - 1.0
    out[small] = np.where(lam[small] == 0.0, eta * t, -pw_small / np.where(lam[small] == 0.0, 1.0, lam[small]))
    out[~small] = -pw_big / lam[~small]
    return out


def ab_diagonals(sigma_diag, mu_hat, eta, t):
    if t < 0 or not eta > 0:
        raise ValueError("need t >= 0 and eta > 0")
    lam = np.asarray(sigma_diag, dtype=np.float64)
    mu = np.asarray(mu_hat, dtype=np.float64)
    m2 = float(mu @ mu)
    a = geometric_gain(lam, eta, t)
    if m2 == 0.0:
        b = a.copy()
    else:
        b = geometric_gain(lam + m2, eta, t) / m2
    return ABDiagonals(a, b, eta, t, m2)


def _rank_one_coef(ab, verbatim):
    # the mean-term coefficient is B - A/||mu||^2; ``verbatim`` keeps B - A
    if ab.mu_norm_sq == 0.0:
        return np.zeros_like(ab.a)
    return ab.b - ab.a if verbatim else ab.b - ab.a / ab.mu_norm_sq


def closed_form_paper(K_tilde, y, eta, t, loss_scale="unnormalized", verbatim=False):
    """Diagonal-plus-rank-one evaluation of the GD iterate.

    Uses only the diagonal of the centered scatter; the off-diagonal part is
    reported in ``diagnostics["offdiag_max"]``.
    """
    Kt = np.asarray(K_tilde, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    stats = second_moment_stats(Kt)
    eta_eff = _effective_eta(eta, Kt.shape[0], loss_scale)
    ab = ab_diagonals(stats.sigma_diag, stats.mu_hat, eta_eff, t)
    v = Kt.T @ y
    w = _rank_one_coef(ab, verbatim) * stats.mu_hat * (stats.mu_hat @ v) + ab.a * v
    return AnalyticSolution(w, "paper_closed_form", eta, t,
                            diagnostics={"offdiag_max": stats.offdiag_max, "verbatim": verbatim})


def closed_form_exact(K_tilde, y, eta, t, loss_scale="unnormalized"):
    Kt = np.asarray(K_tilde, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    eta_eff = _effective_eta(eta, Kt.shape[0], loss_scale)
    lam, Q = symmetric_eig(Kt.T @ Kt)
    w = Q @ (geometric_gain(lam, eta_eff, t) * (Q.T @ (Kt.T @ y)))
    return AnalyticSolution(w, "exact_eigen", eta, t)


def commutation_gap(K_tilde, y, eta, t, loss_scale="unnormalized"):
    """Max-abs gap between the diagonal-plus-rank-one form and exact GD."""
    a = closed_form_paper(K_tilde, y, eta, t, loss_scale).w_tilde
    b = closed_form_exact(K_tilde, y, eta, t, loss_scale).w_tilde
    return float(np.max(np.abs(a - b)))


def _check_invertible(A, what):
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[-1] <= 1e-14 * s[0] or s[-1] == 0.0:
        smin = s[-1] if s.size else 0.0
        raise SingularSystemError(f"{what} is singular (smallest singular value {smin:.3g})")
    return float(s[0] / s[-1])


def lambda_matrix(ab, mu_hat, sigma_diag, verbatim=False):
    """Regularizer Lambda with (Sigma + mu mu^T + Lambda)^{-1} = the GD operator.

    The GD operator is ``A + c mu mu^T`` with ``c = B - A/||mu||^2``. With
    ``verbatim`` the inner matrix is ``B + (A - B) mu mu^T`` as printed.
    """
    mu = np.asarray(mu_hat, dtype=np.float64)
    sig = np.asarray(sigma_diag, dtype=np.float64)
    outer = np.outer(mu, mu)
    if verbatim:
        G = np.diag(ab.b) + (ab.a - ab.b)[:, None] * outer
    else:
        G = np.diag(ab.a) + _rank_one_coef(ab, False)[:, None] * outer
    cond = _check_invertible(G, "inner matrix")
    Lam = np.linalg.solve(G, np.eye(sig.size)) - np.diag(sig) - outer
    return LambdaMatrix(0.5 * (Lam + Lam.T), cond)


def lambda_matrix_exact(K_tilde, eta, t, loss_scale="unnormalized"):
    """Lambda from the exact spectrum: Q (1/g(L) - L) Q^T."""
    Kt = np.asarray(K_tilde, dtype=np.float64)
    eta_eff = _effective_eta(eta, Kt.shape[0], loss_scale)
    lam, Q = symmetric_eig(Kt.T @ Kt)
    g = geometric_gain(lam, eta_eff, t)
    if np.any(g <= 0.0):
        raise SingularSystemError("GD operator is singular (t = 0 or unstable spectrum)")
    Lam = (Q * (1.0 / g - lam)) @ Q.T
    return LambdaMatrix(0.5 * (Lam + Lam.T), float(g.max() / g.min()))


def _sym_solve(A, b):
    A = 0.5 * (A + A.T)
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), b)
    except np.linalg.LinAlgError:
        try:
            return scipy.linalg.solve(A, b, assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise SingularSystemError(str(exc)) from exc


def ridge_solution(K_tilde, y, Lambda):
    Kt = np.asarray(K_tilde, dtype=np.float64)
    L = Lambda.Lambda if isinstance(Lambda, LambdaMatrix) else np.asarray(Lambda, dtype=np.float64)
    A = Kt.T @ Kt + L
    cond = _check_invertible(A, "K^T K + Lambda")
    w = _sym_solve(A, Kt.T @ np.asarray(y, dtype=np.float64))
    return AnalyticSolution(w, "ridge", diagnostics={"cond": cond})


def expected_random_solution(sigma_prime, mu):
    """Direction of (Sigma' + mu mu^T)^{-1} mu through the Woodbury identity.

    Also solves the system directly and reports the cosine between the two.
    """
    S = np.asarray(sigma_prime, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if S.ndim == 1:
        S = np.diag(S)
    cond = _check_invertible(S, "Sigma'")
    S_inv = np.linalg.inv(S)
    s_mu = S_inv @ mu
    denom = 1.0 + mu @ s_mu
    w = s_mu - S_inv @ (mu * (mu @ s_mu)) / denom
    direct = np.linalg.solve(S + np.outer(mu, mu), mu)
    nw, nd = np.linalg.norm(w), np.linalg.norm(direct)
    cosine = float(w @ direct / (nw * nd)) if nw > 0 and nd > 0 else float("nan")
    return AnalyticSolution(w, "woodbury_expectation",
                            diagnostics={"direct": direct, "cosine": cosine, "cond": cond})


def woodbury_expectation(K_tilde, eta, t, loss_scale="unnormalized", exact=True):
    """Expected random-label solution direction from the data.

    ``exact`` uses the full centered scatter and the exact-spectrum Lambda,
    for which the result is proportional to GD with y = 1/2. Otherwise the
    diagonal scatter and the rank-one Lambda are used.
    """
    Kt = np.asarray(K_tilde, dtype=np.float64)
    stats = second_moment_stats(Kt)
    if exact:
        Lam = lambda_matrix_exact(Kt, eta, t, loss_scale).Lambda
        Sp = stats.scatter + Lam
    else:
        eta_eff = _effective_eta(eta, Kt.shape[0], loss_scale)
        ab = ab_diagonals(stats.sigma_diag, stats.mu_hat, eta_eff, t)
        Lam = lambda_matrix(ab, stats.mu_hat, stats.sigma_diag).Lambda
        Sp = np.diag(stats.sigma_diag) + Lam
    sol = expected_random_solution(Sp, stats.mu_hat)
    sol.eta, sol.t = eta, t
    return sol


def predicted_profile(w_tilde, sigma_init=0.0):
    """Mean-square energy profile w_i^2 + sigma^2."""
    w = np.asarray(w_tilde, dtype=np.float64)
    return EnergyProfile(w * w + float(sigma_init) ** 2, "mean_square")


def predicted_label_sensitivity(K_tilde, y_true, eta, t, sigma_init=0.0, loss_scale="unnormalized"):
    """Correlation of predicted profiles under true labels and E[y] = 1/2."""
    Kt = np.asarray(K_tilde, dtype=np.float64)
    w_true = closed_form_exact(Kt, y_true, eta, t, loss_scale).w_tilde
    w_rand = closed_form_exact(Kt, np.full(Kt.shape[0], 0.5), eta, t, loss_scale).w_tilde
    return pearson(predicted_profile(w_true, sigma_init).e, predicted_profile(w_rand, sigma_init).e)
