"""Generalized PCA for matrix factor models with separable noise covariance."""

from .covariance import (
    ThresholdConfig,
    ThresholdedCovariance,
    adaptive_threshold,
    cross_validate_constant,
    data_driven_gpca,
    estimate_separable_cov,
    min_pd_constant,
    residual_series,
    sample_col_cov,
    sample_row_cov,
)
from .errors import GPCAError
from .estimators import (
    EstimationResult,
    SeparableCovariance,
    alpha_pca,
    closed_form_factor,
    common_components,
    estimate_factors,
    oracle_gpca,
    pe_estimate,
)
from .linalg import subspace_distance, sym_eig_topk

__version__ = "0.1.0"
