"""Pseudo-AIC/BIC selection of truncation orders, refinement bandwidth and
bin count, plus k-fold-by-subject cross-validation for smoother bandwidths.

The truncation criterion scores BLUP reconstructions of each subject's
observations inside its own bin; the bandwidth and bin-count criteria score
the full refined regression fit of the response observations, penalized by
the effective parameter count of the refinement smoother (trace form) or by
the total parameter count 2MKP.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .data import LongitudinalDataset, Subject
from .errors import (
    EmptyBin,
    InsufficientCenters,
    InsufficientLocalData,
    TruncationTooLarge,
)
from .fpca import (
    VARIANCE_FLOOR,
    BinEstimate,
    aggregate_1d,
    aggregate_2d,
    estimate_mean,
    observation_covariance,
    raw_covariances,
    raw_cross_products,
)
from .grids import Grid
from .kernels import Kernel1D, Kernel2D
from .smoothing import (
    LocalFitConfig,
    local_linear_1d_at,
    local_linear_2d_at,
    lp_weights,
    smoothing_matrix,
    widen_until_fit,
)

if TYPE_CHECKING:  # pragma: no cover
    from .regression import FittedModel

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class SelectionReport:
    """Chosen hyperparameters plus the score tables behind them."""

    criterion: str
    chosen: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    bandwidths: list = field(default_factory=list)

    def to_rows(self) -> list[tuple[str, str, float]]:
        """Flatten score tables to (candidate, criterion, score) rows."""
        rows = []
        for name, table in self.tables.items():
            for cand, score in table:
                rows.append((f"{name}={cand}", self.criterion, float(score)))
        return rows


def _truncation_table(bins: list[BinEstimate], subjects_by_bin: list[list[Subject]],
                      candidates, stream: str, criterion: str, n_total: int):
    """Penalized pseudo-deviance of BLUP reconstructions per candidate order."""
    avail = []
    for b in bins:
        eig = b.eig_x if stream == "x" else b.eig_y
        avail.append(eig.n_components)
    cap = min(avail)
    feasible = [c for c in candidates if c <= cap]
    skipped = [c for c in candidates if c > cap]
    if skipped:
        warnings.warn(
            f"skipping truncation candidate(s) {skipped} on the {stream.upper()} side: "
            f"some bin has only {cap} component(s)")
    if not feasible:
        raise TruncationTooLarge(
            f"no feasible truncation candidate on the {stream.upper()} side "
            f"(bins provide at most {cap} component(s))")
    kmax = max(feasible)
    n_bins = len(bins)

    sse = dict.fromkeys(feasible, 0.0)
    base = 0.0
    for b, subjects in zip(bins, subjects_by_bin):
        eig = b.eig_x if stream == "x" else b.eig_y
        cov = b.cov_x if stream == "x" else b.cov_y
        mean = b.mean_x if stream == "x" else b.mean_y
        sigma2 = max(b.sigma2_x if stream == "x" else b.sigma2_y, VARIANCE_FLOOR)
        for sub in subjects:
            times = sub.x_times if stream == "x" else sub.y_times
            values = sub.x_values if stream == "x" else sub.y_values
            if times.size == 0:
                continue
            resid0 = values - mean.at(times)
            sigma = observation_covariance(times, cov, sigma2)
            alpha = np.linalg.solve(sigma, resid0)
            phi = eig.at(times)[:, :kmax]
            scores = eig.values[:kmax] * (phi.T @ alpha)
            eps = resid0.copy()
            for k in range(1, kmax + 1):
                eps -= scores[k - 1] * phi[:, k - 1]
                if k in sse:
                    sse[k] += float(eps @ eps) / sigma2
            base += times.size * (_LOG_2PI + math.log(sigma2))

    table = []
    for c in feasible:
        penalty = 2.0 * n_bins * c if criterion == "AIC" else math.log(n_total) * n_bins * c
        table.append((c, sse[c] + base + penalty))
    return table


def _argmin_with_ties(table, prefer_last: bool = False):
    """Strict argmin over (candidate, score) rows; equal scores keep the
    earlier row, so candidate ordering encodes the tie rule."""
    best = None
    for cand, score in table:
        if best is None or score < best[1] or (prefer_last and score <= best[1]):
            best = (cand, score)
    return best[0]


def select_truncation(bins: list[BinEstimate], subjects_by_bin: list[list[Subject]],
                      candidates, criterion: str = "BIC", n_total: int | None = None):
    """Truncation orders (M, K) minimizing the penalized pseudo-deviance.

    M comes from the predictor-side criterion, K from the response side
    (None for scalar responses). Ties break toward smaller orders.
    """
    if n_total is None:
        n_total = sum(len(s) for s in subjects_by_bin)
    tables = {}
    m_table = _truncation_table(bins, subjects_by_bin, candidates, "x", criterion, n_total)
    tables["M"] = m_table
    m = _argmin_with_ties(m_table)
    if bins[0].eig_y is None:
        return m, None, tables
    k_table = _truncation_table(bins, subjects_by_bin, candidates, "y", criterion, n_total)
    tables["K"] = k_table
    k = _argmin_with_ties(k_table)
    return m, k, tables


class _RefinementResiduals:
    """Shared precomputation for the refined-fit residual criterion.

    Per (subject, bin): an LU factor of the predictor observation covariance,
    eigenfunction values at the subject's own observation times, and the
    slope coefficient matrix sigma_mk / rho_m. Only the refined means depend
    on the refinement bandwidth, so scoring one more candidate is cheap.
    """

    def __init__(self, model: "FittedModel", ds: LongitudinalDataset):
        self.model = model
        self.ds = ds
        m, k = model.truncation
        self.m = m
        self.k = k
        self.scalar = model.scalar_response
        self.gamma = []
        for b in model.bins:
            if self.scalar:
                self.gamma.append(b.sigma_mk[:m] / b.eig_x.values[:m])
            else:
                self.gamma.append(b.sigma_mk[:m, :k] / b.eig_x.values[:m, None])
        self.mean_x_stack = np.stack([b.mean_x.values for b in model.bins])
        if self.scalar:
            self.mean_y_stack = np.array([b.mean_y for b in model.bins])
        else:
            self.mean_y_stack = np.stack([b.mean_y.values for b in model.bins])
        self.lu = []
        self.psi = []
        self.phi = []
        for sub in ds.subjects:
            lus, psis, phis = [], [], []
            for b in model.bins:
                sigma = observation_covariance(
                    sub.x_times, b.cov_x, max(b.sigma2_x, VARIANCE_FLOOR))
                lus.append(lu_factor(sigma))
                psis.append(b.eig_x.at(sub.x_times)[:, :m])
                phis.append(None if self.scalar else b.eig_y.at(sub.y_times)[:, :k])
            self.lu.append(lus)
            self.psi.append(psis)
            self.phi.append(phis)
        if self.scalar:
            resp = np.array([s.y_scalar for s in ds.subjects])
            self.sigma2_y = max(float(np.var(resp)), VARIANCE_FLOOR)
            self.n_obs_y = ds.n
        else:
            self.sigma2_y = max(model.sigma2_y, VARIANCE_FLOOR)
            self.n_obs_y = sum(s.n_y for s in ds.subjects)

    def residual_term(self, b: float) -> float:
        """Sum over subjects of eps'eps / sigma2 + N log(2 pi sigma2) at
        refinement bandwidth b.

        Weights widen exactly as refine() does at prediction time, so the
        criterion scores the model as deployed; InsufficientCenters escapes
        only when widening is exhausted at some subject's covariate.
        """
        model = self.model
        centers = model.partition.centers
        grid_s = model.s_grid.points
        grid_t = None if self.scalar else model.t_grid.points
        kernel = model.kernel

        def weights_at(z: float) -> np.ndarray:
            return widen_until_fit(
                lambda c: lp_weights(0, 1, centers, z, float(c.bandwidth), kernel),
                LocalFitConfig(b, kernel))

        sse = 0.0
        for i, sub in enumerate(self.ds.subjects):
            w = weights_at(sub.z)
            mu_x = w @ self.mean_x_stack
            rx = sub.x_values - np.interp(sub.x_times, grid_s, mu_x)
            if self.scalar:
                mu_y = float(w @ self.mean_y_stack)
                fitted = 0.0
            else:
                mu_y = np.interp(sub.y_times, grid_t, w @ self.mean_y_stack)
                fitted = np.zeros(sub.n_y)
            for p in np.flatnonzero(w != 0.0):
                alpha = lu_solve(self.lu[i][p], rx)
                zeta = model.bins[p].eig_x.values[:self.m] * (self.psi[i][p].T @ alpha)
                if self.scalar:
                    fitted += w[p] * float(self.gamma[p] @ zeta)
                else:
                    fitted += w[p] * (self.phi[i][p] @ (self.gamma[p].T @ zeta))
            if self.scalar:
                eps = sub.y_scalar - mu_y - fitted
                sse += eps * eps
            else:
                eps = sub.y_values - mu_y - fitted
                sse += float(eps @ eps)
        return sse / self.sigma2_y + self.n_obs_y * (_LOG_2PI + math.log(self.sigma2_y))


def select_bandwidth(model: "FittedModel", ds: LongitudinalDataset, candidates,
                     criterion: str = "BIC"):
    """Refinement bandwidth minimizing the penalized refined-fit deviance.

    The penalty is the effective parameter count tr(SᵀS) of the refinement
    smoother matrix, scaled by 2 (AIC) or log n (BIC). Inadmissible
    candidates are skipped; ties break toward larger bandwidths.

    Returns (chosen bandwidth, score table, residual term at the chosen b).
    """
    prep = _RefinementResiduals(model, ds)
    pen_scale = 2.0 if criterion == "AIC" else math.log(ds.n)
    table = []
    resid_by_b = {}
    for b in sorted(set(float(b) for b in candidates)):
        try:
            _, trace = smoothing_matrix(model.partition.centers, b, model.kernel)
            resid = prep.residual_term(b)
        except (InsufficientCenters, InsufficientLocalData):
            continue
        resid_by_b[b] = resid
        table.append((b, resid + pen_scale * trace))
    if not table:
        raise InsufficientCenters("no admissible refinement bandwidth candidate")
    b_star = _argmin_with_ties(table, prefer_last=True)   # larger b wins ties
    return b_star, table, resid_by_b[b_star]


def select_binwidth(ds: LongitudinalDataset, config, candidates,
                    criterion: str = "AIC"):
    """Bin count minimizing the refined-fit deviance plus the 2MKP penalty.

    Every candidate gets a full refit (including truncation and refinement
    bandwidth selection); candidates violating bin occupancy are skipped.
    Ties break toward fewer bins. Returns (P, b*(P), score table).
    """
    from dataclasses import replace

    from . import regression

    pen_scale = 2.0 if criterion == "AIC" else math.log(ds.n)
    table = []
    best = None
    for p in sorted(set(int(p) for p in candidates)):
        cfg_p = replace(config, n_bins=p, refine_bandwidth=None)
        try:
            model_p = regression.fit(ds, cfg_p)
        except EmptyBin:
            warnings.warn(f"skipping bin-count candidate P={p}: occupancy violated")
            continue
        prep = _RefinementResiduals(model_p, ds)
        resid = prep.residual_term(model_p.refine_bandwidth)
        m, k = model_p.truncation
        score = resid + pen_scale * m * (k or 1) * p
        table.append((p, score))
        if best is None or score < best[0]:
            best = (score, p, model_p.refine_bandwidth)
    if best is None:
        raise EmptyBin("no bin-count candidate satisfies the occupancy minimum")
    return best[1], best[2], table


def _fold_of(n_subjects: int, n_folds: int) -> np.ndarray:
    return np.arange(n_subjects) % n_folds


def cv_smoother_bandwidth(subjects: list[Subject], kind: str, n_folds: int,
                          candidates, s_grid: Grid, t_grid: Grid | None = None,
                          kernel: Kernel1D = Kernel1D(), ridge: float = 1e-10,
                          mean_bandwidths: tuple | None = None):
    """K-fold-by-subject CV for one smoother's bandwidth.

    ``kind`` is one of mean_x, mean_y, cov_x, cov_y, cross. Covariance and
    cross kinds center observations with mean curves fitted once on all
    subjects (``mean_bandwidths`` gives their bandwidths). Held-out squared
    error is measured at the held-out raw points against the fitted curve or
    surface interpolated off the grid. Candidates that fail anywhere are
    skipped; ties go to the larger bandwidth.
    """
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if n_folds > len(subjects):
        raise ValueError(
            f"fold count {n_folds} exceeds the {len(subjects)} subjects in the bin")
    folds = _fold_of(len(subjects), n_folds)

    if kind in ("mean_x", "mean_y"):
        stream = "x" if kind == "mean_x" else "y"
        grid = s_grid if stream == "x" else t_grid
        pts = [( s.x_times if stream == "x" else s.y_times,
                 s.x_values if stream == "x" else s.y_values) for s in subjects]
        raw = None
        scalar = False
    else:
        if mean_bandwidths is None:
            raise ValueError(f"{kind} CV needs mean_bandwidths to center observations")
        scalar = t_grid is None
        mean_x = estimate_mean(
            np.concatenate([s.x_times for s in subjects]),
            np.concatenate([s.x_values for s in subjects]),
            LocalFitConfig(mean_bandwidths[0], kernel, ridge), s_grid)
        if kind == "cov_x":
            raw, _ = raw_covariances(subjects, mean_x, "x")
            grids = (s_grid, s_grid)
        elif kind == "cov_y":
            mean_y = estimate_mean(
                np.concatenate([s.y_times for s in subjects]),
                np.concatenate([s.y_values for s in subjects]),
                LocalFitConfig(mean_bandwidths[1], kernel, ridge), t_grid)
            raw, _ = raw_covariances(subjects, mean_y, "y")
            grids = (t_grid, t_grid)
        else:  # cross
            if scalar:
                mean_y = float(np.mean([s.y_scalar for s in subjects]))
                grid = s_grid
            else:
                mean_y = estimate_mean(
                    np.concatenate([s.y_times for s in subjects]),
                    np.concatenate([s.y_values for s in subjects]),
                    LocalFitConfig(mean_bandwidths[1], kernel, ridge), t_grid)
                grids = (s_grid, t_grid)
        # raw parts per subject so folds can split them
        per_subject_raw = []
        for s in subjects:
            if kind == "cov_x":
                r, _ = raw_covariances([s], mean_x, "x")
            elif kind == "cov_y":
                r, _ = raw_covariances([s], mean_y, "y")
            else:
                r = raw_cross_products([s], mean_x, mean_y)
            per_subject_raw.append(r)

    kern2 = Kernel2D(kernel, kernel)
    results = []
    for cand in candidates:
        sse = 0.0
        ok = True
        for f in range(n_folds):
            train = [i for i in range(len(subjects)) if folds[i] != f]
            test = [i for i in range(len(subjects)) if folds[i] == f]
            try:
                if kind in ("mean_x", "mean_y"):
                    tx = np.concatenate([pts[i][0] for i in train])
                    ty = np.concatenate([pts[i][1] for i in train])
                    xu, ybar, w = aggregate_1d(tx, ty)
                    curve = local_linear_1d_at(xu, ybar, grid.points, float(cand),
                                               kernel=kernel, ridge=ridge, weights=w)
                    for i in test:
                        pred = np.interp(pts[i][0], grid.points, curve)
                        sse += float(np.sum((pts[i][1] - pred) ** 2))
                elif kind == "cross" and scalar:
                    tr = np.vstack([per_subject_raw[i] for i in train])
                    xu, ybar, w = aggregate_1d(tr[:, 0], tr[:, 1])
                    curve = local_linear_1d_at(xu, ybar, grid.points, float(cand),
                                               kernel=kernel, ridge=ridge, weights=w)
                    for i in test:
                        r = per_subject_raw[i]
                        pred = np.interp(r[:, 0], grid.points, curve)
                        sse += float(np.sum((r[:, 1] - pred) ** 2))
                else:
                    tr = np.vstack([per_subject_raw[i] for i in train])
                    x1, x2, ybar, w = aggregate_2d(tr[:, 0], tr[:, 1], tr[:, 2])
                    bw = tuple(cand) if isinstance(cand, (tuple, list)) \
                        else (float(cand), float(cand))
                    surf = local_linear_2d_at(x1, x2, ybar, grids[0].points,
                                              grids[1].points, bw, kernel=kern2,
                                              ridge=ridge, weights=w)
                    from .grids import bilinear
                    for i in test:
                        r = per_subject_raw[i]
                        pred = bilinear(grids[0].points, grids[1].points, surf,
                                        r[:, 0], r[:, 1])
                        sse += float(np.sum((r[:, 2] - pred) ** 2))
            except InsufficientLocalData:
                ok = False
                break
        if ok:
            results.append((cand, sse))
    if not results:
        raise InsufficientLocalData(
            f"every candidate bandwidth failed {kind} cross-validation")

    def size(c):
        return c[0] if isinstance(c, (tuple, list)) else float(c)

    results.sort(key=lambda r: size(r[0]), reverse=True)   # larger b wins ties
    best = min(results, key=lambda r: r[1])
    return best[0] if not isinstance(best[0], (tuple, list)) else tuple(best[0])
