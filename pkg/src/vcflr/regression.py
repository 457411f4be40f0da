"""Model fitting, cross-bin refinement, prediction and serialization.

Fitting is a two-step scheme: subjects are binned by the scalar covariate and
each bin gets raw functional-principal-component estimates (means, covariance
surfaces, eigenpairs, mixed moments, a truncated slope surface); the final
estimators at any covariate level are local polynomial combinations of the
per-bin raw estimates. A single-bin fit degenerates to the global functional
linear regression baseline.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import BinPartition, LongitudinalDataset, explicit_bins, partition as make_partition
from .errors import CovariateOutOfDomain, TruncationTooLarge
from .grids import Grid, GridFunction, GridSurface, make_grid
from .kernels import Kernel1D
from .fpca import (
    BinBandwidths,
    BinEstimate,
    blup_scores,
    default_bandwidth,
    fit_bin,
)
from .smoothing import LocalFitConfig, lp_weights, widen_until_fit


@dataclass
class FitConfig:
    """Everything `fit` needs beyond the dataset.

    ``None`` for ``n_bins``, ``truncation`` or ``refine_bandwidth`` requests
    data-driven selection. Bandwidth overrides (``bandwidths`` keys mean_x,
    mean_y, cov_x, cov_y, diag_x, diag_y, cross) apply to every bin; without
    an override each smoother gets the deterministic default scale, refined
    by k-fold cross-validation for the 1D mean smoothers (and for the
    surfaces too when ``cv_surfaces`` is set).
    """

    n_bins: int | None = 8
    bin_candidates: tuple[int, ...] = (4, 6, 8, 10)
    explicit_centers: tuple | None = None      # (centers, width) for preset bins
    grid_size: int = 51
    truncation: tuple[int, int | None] | None = None
    truncation_candidates: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    # bins retain only eigencomponents above this fraction of their leading
    # eigenvalue; at a few dozen subjects per bin anything below a few percent
    # is sampling noise, and the raw slope divides by these eigenvalues
    eigen_floor: float = 0.03
    refine_order: int = 1
    refine_bandwidth: float | None = None
    refine_candidates: tuple[float, ...] | None = None
    criterion: str = "BIC"                     # truncation and refine bandwidth
    binwidth_criterion: str = "AIC"
    kernel: str = "epanechnikov"
    bandwidths: dict = field(default_factory=dict)
    bandwidth_policy: str = "cv"               # "cv" | "default" for mean smoothers
    cv_surfaces: bool = False
    cv_folds: int = 5
    cv_factors: tuple[float, ...] = (0.5, 0.7071, 1.0, 1.4142, 2.0)
    min_bin_count: int = 5
    ridge: float = 1e-10
    threads: int = 1

    def kernel1d(self) -> Kernel1D:
        return Kernel1D(self.kernel)


@dataclass
class FittedModel:
    """Fitted varying-coefficient (or, with one bin, global) model."""

    s_grid: Grid
    t_grid: Grid | None
    s_domain: tuple[float, float]
    t_domain: tuple[float, float] | None
    z_domain: tuple[float, float]
    partition: BinPartition
    bins: list[BinEstimate]
    truncation: tuple[int, int | None]
    refine_order: int
    refine_bandwidth: float
    kernel: Kernel1D
    sigma2_x: float
    sigma2_y: float | None
    scalar_response: bool = False
    selection: object | None = None

    @property
    def n_bins(self) -> int:
        return len(self.bins)


@dataclass
class Prediction:
    """Predicted conditional response for one subject."""

    y_hat: GridFunction | float
    z_star: float
    mode: str = "dense"


def raw_beta(bin_est: BinEstimate, m: int, k: int | None = None):
    """Truncated eigen-expansion of the raw slope at one bin center.

    Functional response: sum over (m', k') of sigma_{m'k'} / rho_{m'} times
    psi_{m'}(s) phi_{k'}(t). Scalar response: the analogous curve in s.
    """
    eig_x = bin_est.eig_x
    if m < 1 or m > eig_x.n_components or m > bin_est.sigma_mk.shape[0]:
        raise TruncationTooLarge(
            f"bin at z={bin_est.center:g} has {eig_x.n_components} predictor "
            f"component(s); cannot truncate at M={m}")
    scaled = bin_est.sigma_mk[:m] / eig_x.values[:m, None] \
        if bin_est.sigma_mk.ndim == 2 else bin_est.sigma_mk[:m] / eig_x.values[:m]
    if bin_est.sigma_mk.ndim == 1:
        values = eig_x.functions[:, :m] @ scaled
        return GridFunction(eig_x.grid, values)
    eig_y = bin_est.eig_y
    if k is None or k < 1 or k > eig_y.n_components or k > bin_est.sigma_mk.shape[1]:
        avail = eig_y.n_components if eig_y is not None else 0
        raise TruncationTooLarge(
            f"bin at z={bin_est.center:g} has {avail} response component(s); "
            f"cannot truncate at K={k}")
    values = eig_x.functions[:, :m] @ scaled[:, :k] @ eig_y.functions[:, :k].T
    return GridSurface(eig_x.grid, eig_y.grid, values)


def refinement_weights(model: FittedModel, z: float) -> np.ndarray:
    """Local polynomial weights over bin centers at covariate level z,
    widening the refinement bandwidth when too few centers carry weight."""
    cfg = LocalFitConfig(model.refine_bandwidth, model.kernel)

    def attempt(c: LocalFitConfig) -> np.ndarray:
        return lp_weights(0, model.refine_order, model.partition.centers, z,
                          float(c.bandwidth), model.kernel)

    return widen_until_fit(attempt, cfg)


def refine(model: FittedModel, z: float):
    """Final estimators at covariate level z.

    Returns (mean_x, mean_y, beta): pointwise weighted combinations of the
    per-bin raw estimates, sharing one weight vector across all grid points.
    """
    lo, hi = model.z_domain
    if not (lo <= z <= hi):
        raise CovariateOutOfDomain(f"z={z:g} outside covariate domain [{lo:g}, {hi:g}]")
    w = refinement_weights(model, z)
    mean_x = GridFunction(model.s_grid, sum(
        wp * b.mean_x.values for wp, b in zip(w, model.bins)))
    if model.scalar_response:
        mean_y = float(sum(wp * b.mean_y for wp, b in zip(w, model.bins)))
        beta = GridFunction(model.s_grid, sum(
            wp * b.raw_beta.values for wp, b in zip(w, model.bins)))
    else:
        mean_y = GridFunction(model.t_grid, sum(
            wp * b.mean_y.values for wp, b in zip(w, model.bins)))
        beta = GridSurface(model.s_grid, model.t_grid, sum(
            wp * b.raw_beta.values for wp, b in zip(w, model.bins)))
    return mean_x, mean_y, beta


def _usable_subjects(ds: LongitudinalDataset) -> LongitudinalDataset:
    """Drop subjects that cannot enter the fit (fewer than two predictor
    observations, or no response information)."""
    keep = []
    dropped = []
    for sub in ds.subjects:
        ok = sub.n_x >= 2 and sub.n_y >= 1
        (keep if ok else dropped).append(sub)
    if dropped:
        warnings.warn(
            f"excluding {len(dropped)} subject(s) with fewer than 2 predictor "
            f"observations or no response (e.g. {dropped[0].id})")
    return LongitudinalDataset(keep, ds.s_domain, ds.t_domain, ds.z_domain,
                               scalar_response=ds.scalar_response)


def _resolve_bandwidths(subjects, cfg: FitConfig, s_grid: Grid,
                        t_grid: Grid | None) -> BinBandwidths:
    """Per-bin smoother bandwidths: overrides win, then CV, then defaults."""
    from . import selection

    scalar = t_grid is None
    kernel = cfg.kernel1d()
    s_len = s_grid.length
    t_len = t_grid.length if t_grid is not None else None
    n_x = sum(s.n_x for s in subjects)
    n_y = sum(s.n_y for s in subjects)
    pairs_x = sum(s.n_x * (s.n_x - 1) for s in subjects)
    pairs_y = sum(s.n_y * (s.n_y - 1) for s in subjects)
    n_cross = sum(s.n_x * s.n_y for s in subjects)
    folds = min(cfg.cv_folds, len(subjects))

    def resolve_1d(key: str, length: float, n: int, kind: str, use_cv: bool) -> float:
        if key in cfg.bandwidths:
            return float(cfg.bandwidths[key])
        h0 = default_bandwidth(length, n)
        if not use_cv:
            return h0
        cands = tuple(h0 * f for f in cfg.cv_factors)
        try:
            return selection.cv_smoother_bandwidth(
                subjects, kind, folds, cands, s_grid, t_grid,
                kernel=kernel, ridge=cfg.ridge)
        except Exception:
            return h0

    cv_means = cfg.bandwidth_policy == "cv"
    mean_x = resolve_1d("mean_x", s_len, n_x, "mean_x", cv_means)
    mean_y = None if scalar else resolve_1d("mean_y", t_len, n_y, "mean_y", cv_means)
    diag_x = resolve_1d("diag_x", s_len, n_x, "diag_x", False)
    diag_y = None if scalar else resolve_1d("diag_y", t_len, n_y, "diag_y", False)

    def resolve_2d(key: str, length1: float, length2: float, n: int, kind: str):
        if key in cfg.bandwidths:
            bw = cfg.bandwidths[key]
            return tuple(float(b) for b in bw) if isinstance(bw, (tuple, list)) \
                else (float(bw), float(bw))
        h1, h2 = default_bandwidth(length1, n), default_bandwidth(length2, n)
        if not cfg.cv_surfaces:
            return (h1, h2)
        cands = tuple((h1 * f, h2 * f) for f in cfg.cv_factors)
        try:
            return selection.cv_smoother_bandwidth(
                subjects, kind, folds, cands, s_grid, t_grid,
                kernel=kernel, ridge=cfg.ridge, mean_bandwidths=(mean_x, mean_y))
        except Exception:
            return (h1, h2)

    cov_x = resolve_2d("cov_x", s_len, s_len, pairs_x, "cov_x")
    cov_y = None if scalar else resolve_2d("cov_y", t_len, t_len, pairs_y, "cov_y")
    if scalar:
        cross = resolve_1d("cross", s_len, n_cross, "cross", cv_means)
    else:
        cross = resolve_2d("cross", s_len, t_len, n_cross, "cross")
    # 2D smoothers take a single per-axis bandwidth pair; collapse symmetric ones
    return BinBandwidths(
        mean_x=mean_x, mean_y=mean_y,
        cov_x=cov_x[0] if isinstance(cov_x, tuple) and cov_x[0] == cov_x[1] else cov_x,
        cov_y=None if cov_y is None else (
            cov_y[0] if isinstance(cov_y, tuple) and cov_y[0] == cov_y[1] else cov_y),
        diag_x=diag_x, diag_y=diag_y, cross=cross,
    )


def fit(ds: LongitudinalDataset, config: FitConfig | None = None) -> FittedModel:
    """Fit the varying-coefficient functional linear regression.

    Bin the subjects by covariate, compute raw per-bin estimates, average the
    per-bin error variances, resolve the truncation orders and the refinement
    bandwidth (by pseudo-AIC/BIC when not fixed in the config), and attach
    the truncated raw slope to every bin.
    """
    from . import selection

    cfg = config if config is not None else FitConfig()
    ds = _usable_subjects(ds)
    kernel = cfg.kernel1d()

    if cfg.explicit_centers is None and cfg.n_bins is None:
        chosen_p, chosen_b, p_table = selection.select_binwidth(
            ds, cfg, cfg.bin_candidates, cfg.binwidth_criterion)
        cfg = replace(cfg, n_bins=chosen_p, refine_bandwidth=chosen_b)
        model = fit(ds, cfg)
        model.selection.tables["P"] = p_table
        model.selection.chosen["P"] = chosen_p
        return model

    if cfg.explicit_centers is not None:
        centers, width = cfg.explicit_centers
        part = explicit_bins(ds, centers, width, min_count=cfg.min_bin_count)
    else:
        part = make_partition(ds, cfg.n_bins, min_count=cfg.min_bin_count)

    s_grid = make_grid(*ds.s_domain, cfg.grid_size)
    t_grid = None if ds.scalar_response else make_grid(*ds.t_domain, cfg.grid_size)

    if cfg.truncation is not None:
        max_m = cfg.truncation[0]
        max_k = cfg.truncation[1] or 1
    else:
        max_m = max_k = max(cfg.truncation_candidates)

    def build(p: int) -> tuple[BinEstimate, BinBandwidths]:
        subjects = [ds.subjects[i] for i in part.index_sets[p]]
        bw = _resolve_bandwidths(subjects, cfg, s_grid, t_grid)
        est = fit_bin(subjects, part.centers[p], s_grid, t_grid, bw, kernel,
                      max_m, max_k, ridge=cfg.ridge,
                      eigen_floor=cfg.eigen_floor)
        return est, bw

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(build, range(part.n_bins)))
    else:
        results = [build(p) for p in range(part.n_bins)]
    bins = [est for est, _ in results]

    sigma2_x = float(np.mean([b.sigma2_x for b in bins]))
    sigma2_y = None if ds.scalar_response else float(np.mean([b.sigma2_y for b in bins]))

    report = selection.SelectionReport(criterion=cfg.criterion, chosen={}, tables={})
    report.bandwidths = [b.bandwidths for b in bins]

    if cfg.truncation is not None:
        m, k = cfg.truncation
    else:
        subjects_by_bin = [[ds.subjects[i] for i in part.index_sets[p]]
                           for p in range(part.n_bins)]
        m, k, tables = selection.select_truncation(
            bins, subjects_by_bin, cfg.truncation_candidates, cfg.criterion,
            n_total=ds.n)
        report.tables.update(tables)
    if ds.scalar_response:
        k = None
    report.chosen.update({"M": m, "K": k})

    for b in bins:
        b.raw_beta = raw_beta(b, m, k)

    model = FittedModel(
        s_grid=s_grid, t_grid=t_grid, s_domain=ds.s_domain, t_domain=ds.t_domain,
        z_domain=ds.z_domain, partition=part, bins=bins, truncation=(m, k),
        refine_order=cfg.refine_order, refine_bandwidth=float("nan"),
        kernel=kernel, sigma2_x=sigma2_x, sigma2_y=sigma2_y,
        scalar_response=ds.scalar_response, selection=report,
    )

    if cfg.refine_bandwidth is not None:
        model.refine_bandwidth = float(cfg.refine_bandwidth)
    else:
        cands = cfg.refine_candidates
        if cands is None:
            z_len = ds.z_domain[1] - ds.z_domain[0]
            lo = part.width / 2.0
            hi = z_len / 2.0
            cands = tuple(np.geomspace(lo, hi, 8)) if lo < hi else (hi,)
        b_star, b_table, _ = selection.select_bandwidth(model, ds, cands, cfg.criterion)
        model.refine_bandwidth = b_star
        report.tables["b"] = b_table
    report.chosen["b"] = model.refine_bandwidth
    report.chosen["P"] = part.n_bins
    return model


def fit_global(ds: LongitudinalDataset, config: FitConfig | None = None) -> FittedModel:
    """Global (non-varying) baseline: a single bin covering all of Z."""
    cfg = config if config is not None else FitConfig()
    cfg = replace(cfg, n_bins=1, explicit_centers=None, bin_candidates=(1,))
    return fit(ds, cfg)


def predict(model: FittedModel, x_obs, z_star: float) -> Prediction:
    """Predicted conditional response trajectory for a new subject.

    Dense predictor observations (maximum gap, including to the domain ends,
    at most twice the grid spacing) are interpolated onto the grid; sparse
    ones are reconstructed from BLUP scores against the nearest bin's
    eigensystem around the refined mean. The centered reconstruction is then
    pushed through the refined slope surface by quadrature.
    """
    lo, hi = model.z_domain
    if not (lo <= z_star <= hi):
        raise CovariateOutOfDomain(f"z*={z_star:g} outside covariate domain [{lo:g}, {hi:g}]")
    pts = np.asarray(x_obs, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("prediction needs at least one predictor observation")
    order = np.argsort(pts[:, 0], kind="stable")
    times, values = pts[order, 0], pts[order, 1]

    mean_x, mean_y, beta = refine(model, z_star)

    spacing = model.s_grid.points[1] - model.s_grid.points[0]
    gaps = np.concatenate([
        [times[0] - model.s_domain[0]], np.diff(times), [model.s_domain[1] - times[-1]]])
    dense = np.max(gaps) <= 2.0 * spacing

    m = model.truncation[0]
    if dense:
        centered = np.interp(model.s_grid.points, times, values) - mean_x.values
        mode = "dense"
    else:
        p_star = model.partition.nearest_bin(z_star)
        near = model.bins[p_star]
        scores = blup_scores(times, values, mean_x.at(times), near.eig_x,
                             near.cov_x, near.sigma2_x, m)
        centered = near.eig_x.functions[:, :m] @ scores
        mode = "sparse"

    integ = model.s_grid.weights * centered
    if model.scalar_response:
        y_hat = float(mean_y + integ @ beta.values)
        return Prediction(y_hat, float(z_star), mode)
    y_vals = mean_y.values + beta.values.T @ integ
    return Prediction(GridFunction(model.t_grid, y_vals), float(z_star), mode)
