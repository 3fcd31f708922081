"""Patch-PCA energy profiles and exact GD dynamics of single-layer linear CNNs."""

from .analytic import (
    closed_form_exact, closed_form_paper, expected_random_solution, lambda_matrix,
    predicted_label_sensitivity, predicted_profile, ridge_solution,
)
from .data_io import (
    gen_shared_mean_dataset, load_cifar10_batch, make_binary_subset, make_labels, shift_class_mean,
)
from .linear_dynamics import GDConfig, gd_run, multi_filter_run
from .patch_engine import build_avg_patch_matrix, extract_patches, fit_pca, to_pca
from .profile import FilterBank, energy_profile, profile_correlation

__version__ = "0.1.0"
