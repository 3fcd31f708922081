"""Recompute the golden constants embedded in ``patchlens.golden``.

Exact rational arithmetic only; nothing here imports patchlens or numpy.
Run ``python tools/golden.py`` and paste the output into
``src/patchlens/golden.py`` when a constant changes.
"""

from fractions import Fraction as Fr
import pprint


def gd_two_steps():
    # K = I2, y = (1, 0), eta = 1/10, w0 = 0
    eta = Fr(1, 10)
    y = [Fr(1), Fr(0)]
    w = [Fr(0), Fr(0)]
    out = []
    for _ in range(2):
        w = [wi - eta * (wi - yi) for wi, yi in zip(w, y)]
        out.append(list(w))
    return out


def geometric_gain(lam, eta, t):
    return sum(eta * (1 - eta * lam) ** j for j in range(t))


def woodbury_2x2():
    # Sigma' = I2, mu = (1, 0): (I + mu mu^T)^{-1} mu by the 2x2 adjugate
    a, b, c, d = Fr(2), Fr(0), Fr(0), Fr(1)
    det = a * d - b * c
    inv = [[d / det, -b / det], [-c / det, a / det]]
    mu = [Fr(1), Fr(0)]
    return [inv[0][0] * mu[0] + inv[0][1] * mu[1], inv[1][0] * mu[0] + inv[1][1] * mu[1]]


def patches_4x4():
    img = [[4 * r + c + 1 for c in range(4)] for r in range(4)]
    out = []
    for r0 in range(2):
        for c0 in range(2):
            out.append([img[r0 + r][c0 + c] for r in range(3) for c in range(3)])
    return out


def golden():
    eta = Fr(1, 10)
    a_t2 = geometric_gain(Fr(1), eta, 2)
    m2 = Fr(1)
    a_t1 = geometric_gain(Fr(1), eta, 1)
    b_t1 = geometric_gain(Fr(1) + m2, eta, 1) / m2
    return {
        "gd_step1": [float(x) for x in gd_two_steps()[0]],
        "gd_step2": [float(x) for x in gd_two_steps()[1]],
        "a_lam1_eta01_t2": float(a_t2),
        "ab_lam1_mu1_eta01_t1": [float(a_t1), float(b_t1)],
        "lambda_mu0_lam1_eta01_t2": float(1 / a_t2 - 1),
        "woodbury_I2_e1": [float(x) for x in woodbury_2x2()],
        "patches_4x4_k3": patches_4x4(),
        "stats_rows_pm1": {"mu_hat": [0.0, 0.0], "sigma_diag": [2.0, 0.0]},
    }


if __name__ == "__main__":
    pprint.pprint(golden(), sort_dicts=True)
