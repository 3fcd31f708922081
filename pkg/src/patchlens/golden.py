"""Golden values for ``verify``; regenerate with ``python tools/golden.py``."""

GOLDEN = {'a_lam1_eta01_t2': 0.19,
 'ab_lam1_mu1_eta01_t1': [0.1, 0.1],
 'gd_step1': [0.1, 0.0],
 'gd_step2': [0.19, 0.0],
 'lambda_mu0_lam1_eta01_t2': 4.2631578947368425,
 'patches_4x4_k3': [[1, 2, 3, 5, 6, 7, 9, 10, 11],
                    [2, 3, 4, 6, 7, 8, 10, 11, 12],
                    [5, 6, 7, 9, 10, 11, 13, 14, 15],
                    [6, 7, 8, 10, 11, 12, 14, 15, 16]],
 'stats_rows_pm1': {'mu_hat': [0.0, 0.0], 'sigma_diag': [2.0, 0.0]},
 'woodbury_I2_e1': [0.5, 0.0]}
