"""Varying-coefficient functional linear regression for sparse longitudinal data."""

from .data import (
    BinPartition,
    LongitudinalDataset,
    Subject,
    explicit_bins,
    load_csv,
    partition,
    save_csv,
)
from .errors import VcflrError
from .fpca import (
    BinEstimate,
    EigenSystem,
    blup_scores,
    eigendecompose,
    estimate_mean,
    estimate_scores,
    estimate_sigma2,
    raw_covariances,
    sigma_mk,
    smooth_covariance,
    smooth_cross_covariance,
)
from .grids import Grid, GridFunction, GridSurface, double_integral, inner_product, integrate, make_grid
from .kernels import Kernel1D, Kernel2D, kernel_eval
from .regression import (
    FitConfig,
    FittedModel,
    Prediction,
    fit,
    fit_global,
    predict,
    raw_beta,
    refine,
)
from .selection import (
    SelectionReport,
    cv_smoother_bandwidth,
    select_bandwidth,
    select_binwidth,
    select_truncation,
)
from .serialize import load_model, save_model
from .simulation import REGULAR, SPARSE, SimDesign, SimTruth, generate, mispe
from .smoothing import LocalFitConfig, local_linear_1d, local_linear_2d, lp_weights, smoothing_matrix

__version__ = "0.1.0"

__all__ = [
    "BinEstimate", "BinPartition", "EigenSystem", "FitConfig", "FittedModel",
    "Grid", "GridFunction", "GridSurface", "Kernel1D", "Kernel2D",
    "LocalFitConfig", "LongitudinalDataset", "Prediction", "REGULAR", "SPARSE",
    "SelectionReport", "SimDesign", "SimTruth", "Subject", "VcflrError",
    "blup_scores", "cv_smoother_bandwidth", "double_integral", "eigendecompose",
    "estimate_mean", "estimate_scores", "estimate_sigma2", "explicit_bins",
    "fit", "fit_global", "generate", "inner_product", "integrate",
    "kernel_eval", "load_csv", "load_model", "local_linear_1d",
    "local_linear_2d", "lp_weights", "make_grid", "mispe", "partition",
    "predict", "raw_beta", "raw_covariances", "refine", "save_csv",
    "save_model", "select_bandwidth", "select_binwidth", "select_truncation",
    "sigma_mk", "smooth_covariance", "smooth_cross_covariance",
    "smoothing_matrix",
]
