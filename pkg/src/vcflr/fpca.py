"""Per-bin raw estimation.

Everything a single covariate bin contributes to the model is computed here:
conditional mean curves, covariance and cross-covariance surfaces (with the
measurement-error-biased diagonal excluded), error variances recovered from
the smoothed diagonal, eigenpairs of the discretized covariance operators,
the mixed-moment matrix linking predictor and response scores, and BLUP
score estimates for individual subjects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Subject
from .errors import (
    InsufficientLocalData,
    NotSymmetric,
    SingularCovariance,
    TruncationTooLarge,
)
from .grids import Grid, GridFunction, GridSurface, make_grid
from .kernels import Kernel1D, Kernel2D, kernel_eval
from .smoothing import (
    _SINGULAR_RTOL,
    _support_counts,
    LocalFitConfig,
    local_linear_1d_at,
    local_linear_2d_at,
    widen_until_fit,
)

# Lower bound applied to estimated error variances wherever they enter a
# logarithm or a covariance diagonal; the clamp-at-zero rule can otherwise
# produce exact zeros.
VARIANCE_FLOOR = 1e-8


@dataclass
class EigenSystem:
    """Positive eigenvalues (descending) and orthonormal eigenfunctions."""

    grid: Grid
    values: np.ndarray              # shape (n_comp,)
    functions: np.ndarray = field(repr=False)   # shape (grid.n, n_comp)

    @property
    def n_components(self) -> int:
        return self.values.size

    def function(self, k: int) -> GridFunction:
        return GridFunction(self.grid, self.functions[:, k].copy())

    def at(self, times) -> np.ndarray:
        """All eigenfunctions linearly interpolated at given times: (n, n_comp)."""
        times = np.asarray(times, dtype=float)
        out = np.empty((times.size, self.n_components))
        for k in range(self.n_components):
            out[:, k] = np.interp(times, self.grid.points, self.functions[:, k])
        return out


@dataclass
class BinEstimate:
    """Raw estimates attached to one covariate bin.

    ``mean_y`` is a float and ``cross``/``raw_beta`` are curves in
    scalar-response mode; ``eig_y``, ``cov_y`` and ``sigma2_y`` are then None.
    ``sigma_mk`` holds mixed moments up to the largest truncation requested at
    fit time; the final model slices it down to the selected (M, K).
    """

    center: float
    n_subjects: int
    mean_x: GridFunction
    mean_y: GridFunction | float
    cov_x: GridSurface
    cov_y: GridSurface | None
    cross: GridSurface | GridFunction
    eig_x: EigenSystem
    eig_y: EigenSystem | None
    sigma_mk: np.ndarray
    sigma2_x: float
    sigma2_y: float | None
    bandwidths: dict = field(default_factory=dict)
    raw_beta: GridSurface | GridFunction | None = None


def aggregate_1d(x, y):
    """Collapse duplicate x locations to (unique x, mean y, multiplicity).

    The weighted points produce exactly the same local least-squares normal
    equations as the raw ones, which makes regular designs cheap to smooth.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xu, inv, w = np.unique(x, return_inverse=True, return_counts=True)
    ybar = np.bincount(inv, weights=y) / w
    return xu, ybar, w.astype(float)


def aggregate_2d(x1, x2, y):
    """2D analogue of aggregate_1d for duplicate (x1, x2) locations."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.lexsort((x2, x1))
    x1s, x2s, ys = x1[order], x2[order], y[order]
    new = np.empty(x1s.size, dtype=bool)
    new[0] = True
    new[1:] = (np.diff(x1s) != 0) | (np.diff(x2s) != 0)
    group = np.cumsum(new) - 1
    w = np.bincount(group).astype(float)
    ybar = np.bincount(group, weights=ys) / w
    return x1s[new], x2s[new], ybar, w


def estimate_mean(times, values, cfg: LocalFitConfig, grid: Grid) -> GridFunction:
    """Local linear mean curve from pooled bin observations.

    Widens the bandwidth (x1.5, up to 5 attempts) when some grid point lacks
    two distinct observation times in its kernel window.
    """
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise InsufficientLocalData("mean estimation needs at least two observations")
    xu, ybar, w = aggregate_1d(times, values)
    kern = cfg.kernel if isinstance(cfg.kernel, Kernel1D) else cfg.kernel.kx

    def attempt(c: LocalFitConfig) -> GridFunction:
        vals = local_linear_1d_at(xu, ybar, grid.points, float(c.bandwidth),
                                  kernel=kern, ridge=c.ridge, weights=w)
        return GridFunction(grid, vals)

    return widen_until_fit(attempt, cfg)


def raw_covariances(subjects: list[Subject], mean: GridFunction, stream: str = "x"):
    """Per-subject products of centered observations.

    Returns ``(off_diag, diag)`` where off_diag is an (n, 3) array of
    (s1, s2, value) with the j = l products excluded, and diag is an (m, 2)
    array of (s, value). Subjects with a single observation contribute only
    diagonal entries.
    """
    off_parts, diag_parts = [], []
    for sub in subjects:
        times = sub.x_times if stream == "x" else sub.y_times
        values = sub.x_values if stream == "x" else sub.y_values
        n = times.size
        if n == 0:
            continue
        resid = values - mean.at(times)
        prod = np.outer(resid, resid)
        diag_parts.append(np.column_stack([times, resid * resid]))
        if n >= 2:
            ii, jj = np.where(~np.eye(n, dtype=bool))
            off_parts.append(np.column_stack([times[ii], times[jj], prod[ii, jj]]))
    off = np.vstack(off_parts) if off_parts else np.empty((0, 3))
    diag = np.vstack(diag_parts) if diag_parts else np.empty((0, 2))
    return off, diag


def smooth_covariance(pairs: np.ndarray, cfg: LocalFitConfig, grid: Grid) -> GridSurface:
    """Smooth raw off-diagonal covariances onto grid x grid and symmetrize."""
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 3)
    x1, x2, ybar, w = aggregate_2d(pairs[:, 0], pairs[:, 1], pairs[:, 2])
    bw = cfg.bandwidth if isinstance(cfg.bandwidth, tuple) else (cfg.bandwidth, cfg.bandwidth)
    kern = cfg.kernel if isinstance(cfg.kernel, Kernel2D) else Kernel2D(cfg.kernel, cfg.kernel)

    def attempt(c: LocalFitConfig) -> np.ndarray:
        b = c.bandwidth if isinstance(c.bandwidth, tuple) else (c.bandwidth, c.bandwidth)
        return local_linear_2d_at(x1, x2, ybar, grid.points, grid.points, b,
                                  kernel=kern, ridge=c.ridge, weights=w)

    values = widen_until_fit(attempt, LocalFitConfig(bw, kern, cfg.ridge))
    return GridSurface(grid, grid, (values + values.T) / 2.0)


def smooth_cross_covariance(subjects: list[Subject], mean_x: GridFunction,
                            mean_y: GridFunction | float, cfg: LocalFitConfig,
                            grids: tuple[Grid, Grid] | Grid):
    """Smooth raw cross-covariances.

    Functional responses use every (l, j) observation pair (measurement
    errors are independent across streams, so no diagonal is removed) and a
    2D smoother; scalar responses reduce to a curve smoothed in s.
    """
    if isinstance(mean_y, GridFunction):
        raw = raw_cross_products(subjects, mean_x, mean_y)
        grid_s, grid_t = grids
        x1, x2, ybar, w = aggregate_2d(raw[:, 0], raw[:, 1], raw[:, 2])
        bw = cfg.bandwidth if isinstance(cfg.bandwidth, tuple) else (cfg.bandwidth, cfg.bandwidth)
        kern = cfg.kernel if isinstance(cfg.kernel, Kernel2D) else Kernel2D(cfg.kernel, cfg.kernel)

        def attempt(c: LocalFitConfig) -> np.ndarray:
            b = c.bandwidth if isinstance(c.bandwidth, tuple) else (c.bandwidth, c.bandwidth)
            return local_linear_2d_at(x1, x2, ybar, grid_s.points, grid_t.points, b,
                                      kernel=kern, ridge=c.ridge, weights=w)

        values = widen_until_fit(attempt, LocalFitConfig(bw, kern, cfg.ridge))
        return GridSurface(grid_s, grid_t, values)

    raw = raw_cross_products(subjects, mean_x, mean_y)
    grid_s = grids if isinstance(grids, Grid) else grids[0]
    xu, ybar, w = aggregate_1d(raw[:, 0], raw[:, 1])
    kern = cfg.kernel if isinstance(cfg.kernel, Kernel1D) else cfg.kernel.kx

    def attempt1d(c: LocalFitConfig) -> GridFunction:
        vals = local_linear_1d_at(xu, ybar, grid_s.points, float(c.bandwidth),
                                  kernel=kern, ridge=c.ridge, weights=w)
        return GridFunction(grid_s, vals)

    return widen_until_fit(attempt1d, cfg)


def raw_cross_products(subjects: list[Subject], mean_x: GridFunction,
                       mean_y: GridFunction | float) -> np.ndarray:
    """Raw centered cross products; (s, t, value) rows, or (s, value) rows
    in scalar-response mode."""
    parts = []
    for sub in subjects:
        if sub.n_x == 0 or sub.n_y == 0:
            continue
        rx = sub.x_values - mean_x.at(sub.x_times)
        if isinstance(mean_y, GridFunction):
            ry = sub.y_values - mean_y.at(sub.y_times)
            ss, tt = np.meshgrid(sub.x_times, sub.y_times, indexing="ij")
            parts.append(np.column_stack(
                [ss.ravel(), tt.ravel(), np.outer(rx, ry).ravel()]))
        else:
            ry = sub.y_scalar - mean_y
            parts.append(np.column_stack([sub.x_times, rx * ry]))
    width = 3 if isinstance(mean_y, GridFunction) else 2
    return np.vstack(parts) if parts else np.empty((0, width))


def covariance_diagonal(pairs: np.ndarray, bandwidth: float, grid: Grid,
                        kernel: Kernel1D = Kernel1D(), ridge: float = 1e-10,
                        max_block: int = 2_000_000) -> np.ndarray:
    """Estimate G(s, s) from off-diagonal raw covariances.

    A plain local linear surface flattens the covariance ridge at the
    diagonal, which biases the error-variance difference. Here each diagonal
    point gets a rotated fit: linear along the diagonal, quadratic across it,
    so the across-diagonal curvature is absorbed by its own regressor and the
    along-diagonal bias matches the 1D smoother applied to the diagonal raw
    values (and cancels in their difference).
    """
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 3)
    x1, x2, ybar, w_mult = aggregate_2d(pairs[:, 0], pairs[:, 1], pairs[:, 2])
    v = (x1 + x2) / 2.0
    u = (x1 - x2) / np.sqrt(2.0)
    b = float(bandwidth)

    counts = _support_counts(np.unique(v), grid.points, b, kernel.closed_support)
    if np.any(counts < 3):
        p = int(np.argmax(counts < 3))
        raise InsufficientLocalData(
            f"only {counts[p]} off-diagonal location(s) within bandwidth {b:g} "
            f"of diagonal point {grid.points[p]:g}")

    out = np.empty(grid.n)
    block = max(1, max_block // max(v.size, 1))
    for start in range(0, grid.n, block):
        s = grid.points[start:start + block, None]
        dv = v[None, :] - s
        kw = (kernel_eval(kernel, dv / b)
              * kernel_eval(kernel, u[None, :] / b) * w_mult[None, :])
        q = np.broadcast_to((u * u)[None, :], kw.shape)
        m = np.empty((s.size, 3, 3))
        rhs = np.empty((s.size, 3))
        m[:, 0, 0] = kw.sum(axis=1)
        m[:, 0, 1] = m[:, 1, 0] = (kw * dv).sum(axis=1)
        m[:, 0, 2] = m[:, 2, 0] = (kw * q).sum(axis=1)
        m[:, 1, 1] = (kw * dv * dv).sum(axis=1)
        m[:, 1, 2] = m[:, 2, 1] = (kw * dv * q).sum(axis=1)
        m[:, 2, 2] = (kw * q * q).sum(axis=1)
        rhs[:, 0] = kw @ ybar
        rhs[:, 1] = (kw * dv) @ ybar
        rhs[:, 2] = (kw * q) @ ybar
        det = np.linalg.det(m)
        scale = m[:, 0, 0] * m[:, 1, 1] * m[:, 2, 2]
        bad = det <= _SINGULAR_RTOL * scale
        if np.any(bad):
            lam = ridge * (m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]) / 3.0
            for d in range(3):
                m[bad, d, d] += lam[bad]
        out[start:start + block] = np.linalg.solve(m, rhs[..., None])[:, 0, 0]
    return out


def estimate_sigma2(diag_points: np.ndarray, off_pairs: np.ndarray,
                    cfg: LocalFitConfig, grid: Grid) -> float:
    """Measurement-error variance from diagonal versus off-diagonal smoothing.

    The diagonal raw covariances estimate G(s, s) + sigma^2 and the
    off-diagonal ones G(s, s) alone (via covariance_diagonal); the difference
    of the two smoothed curves, integrated over the middle half of the domain
    (the ends are dropped for stability) and scaled by 2 / |domain|, recovers
    sigma^2, clamped at zero. Both curves use the same bandwidth so their
    smoothing biases cancel.
    """
    diag_points = np.asarray(diag_points, dtype=float).reshape(-1, 2)
    xu, ybar, w = aggregate_1d(diag_points[:, 0], diag_points[:, 1])
    kern = cfg.kernel if isinstance(cfg.kernel, Kernel1D) else cfg.kernel.kx

    def attempt(c: LocalFitConfig) -> tuple[np.ndarray, np.ndarray]:
        v_curve = local_linear_1d_at(xu, ybar, grid.points, float(c.bandwidth),
                                     kernel=kern, ridge=c.ridge, weights=w)
        g_diag = covariance_diagonal(off_pairs, float(c.bandwidth), grid,
                                     kernel=kern, ridge=c.ridge)
        return v_curve, g_diag

    v_curve, g_diag = widen_until_fit(attempt, cfg)
    diff = v_curve - g_diag
    length = grid.length
    inner = make_grid(grid.lower + length / 4.0, grid.upper - length / 4.0,
                      max(2, grid.n // 2 + 1))
    diff_inner = np.interp(inner.points, grid.points, diff)
    sigma2 = (2.0 / length) * float(inner.weights @ diff_inner)
    return max(0.0, sigma2)


def eigendecompose(surface: GridSurface, grid: Grid, max_components: int,
                   rel_tol: float = 1e-10) -> EigenSystem:
    """Eigenpairs of the covariance operator discretized with quadrature.

    The integral operator with kernel G becomes the symmetric matrix
    W^(1/2) G W^(1/2) (W the diagonal of trapezoid weights); eigenvectors map
    back to functions via W^(-1/2) and are normalized to unit trapezoid norm.
    Eigenvalues that are nonpositive or below rel_tol times the largest are
    dropped. Each retained eigenfunction is oriented so its integral over the
    domain is nonnegative (first nonzero value positive on ties).
    """
    g = surface.values
    asym = np.max(np.abs(g - g.T)) if g.size else 0.0
    scale = np.max(np.abs(g)) if g.size else 0.0
    if asym > 1e-8 * max(scale, 1e-300):
        raise NotSymmetric(f"surface asymmetry {asym:g} exceeds tolerance")
    sqw = np.sqrt(grid.weights)
    b = sqw[:, None] * g * sqw[None, :]
    b = (b + b.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(b)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    if eigvals.size == 0 or eigvals[0] <= 0:
        return EigenSystem(grid, np.empty(0), np.empty((grid.n, 0)))
    keep = eigvals > rel_tol * eigvals[0]
    eigvals = eigvals[keep][:max_components]
    eigvecs = eigvecs[:, keep][:, :max_components]
    funcs = eigvecs / sqw[:, None]
    for k in range(funcs.shape[1]):
        norm = np.sqrt(grid.weights @ funcs[:, k] ** 2)
        funcs[:, k] /= norm
        total = grid.weights @ funcs[:, k]
        if total < -1e-12:
            funcs[:, k] = -funcs[:, k]
        elif abs(total) <= 1e-12:
            nz = np.flatnonzero(np.abs(funcs[:, k]) > 1e-12)
            if nz.size and funcs[nz[0], k] < 0:
                funcs[:, k] = -funcs[:, k]
    return EigenSystem(grid, eigvals, funcs)


def sigma_mk(eig_x: EigenSystem, eig_y: EigenSystem | None,
             cross: GridSurface | GridFunction, m: int, k: int | None = None) -> np.ndarray:
    """Mixed moments E(zeta_m xi_k) projected out of the cross-covariance.

    Functional responses give an (m, k) matrix of double integrals; scalar
    responses give a length-m vector of single integrals.
    """
    if m > eig_x.n_components:
        raise TruncationTooLarge(
            f"requested {m} predictor components, only {eig_x.n_components} available")
    if isinstance(cross, GridFunction):
        w = cross.grid.weights * cross.values
        return eig_x.functions[:, :m].T @ w
    if eig_y is None or k is None:
        raise ValueError("functional responses need eig_y and k")
    if k > eig_y.n_components:
        raise TruncationTooLarge(
            f"requested {k} response components, only {eig_y.n_components} available")
    lw = eig_x.functions[:, :m] * cross.row_grid.weights[:, None]
    rw = eig_y.functions[:, :k] * cross.col_grid.weights[:, None]
    return lw.T @ cross.values @ rw


def observation_covariance(times, cov: GridSurface, sigma2: float,
                           cond_limit: float = 1e12) -> np.ndarray:
    """Covariance of one subject's noisy observations.

    The smoothed covariance surface is interpolated at observation-time pairs
    and the error variance added on the diagonal. Noisy surfaces can be
    locally negative definite at close time pairs, which would let the
    process part eat the noise variance and blow up the BLUP, so negative
    eigenvalues of the process block are clipped to zero first (a no-op
    whenever the surface is positive semidefinite there). A diagonal jitter
    of 1e-8 tr(Sigma)/n is applied when the condition number still exceeds
    cond_limit.
    """
    times = np.asarray(times, dtype=float)
    tt1, tt2 = np.meshgrid(times, times, indexing="ij")
    sigma = cov.at(tt1.ravel(), tt2.ravel()).reshape(times.size, times.size)
    sigma = (sigma + sigma.T) / 2.0
    if times.size > 1:
        eigvals, eigvecs = np.linalg.eigh(sigma)
        if eigvals[0] < 0:
            sigma = (eigvecs * np.maximum(eigvals, 0.0)) @ eigvecs.T
            sigma = (sigma + sigma.T) / 2.0
    sigma[np.diag_indices_from(sigma)] += max(sigma2, VARIANCE_FLOOR)
    if np.linalg.cond(sigma) > cond_limit:
        sigma[np.diag_indices_from(sigma)] += 1e-8 * np.trace(sigma) / times.size
    return sigma


def blup_scores(times, values, mean_values, eig: EigenSystem,
                cov: GridSurface, sigma2: float, n_components: int) -> np.ndarray:
    """Best linear predictor of FPC scores from sparse noisy observations.

    score_k = lambda_k phi_k(times)^T Sigma^{-1} (values - mean), with Sigma
    from observation_covariance.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise SingularCovariance("cannot score a subject with no observations")
    if n_components < 1 or n_components > eig.n_components:
        raise TruncationTooLarge(
            f"requested {n_components} components, {eig.n_components} available")
    resid = np.asarray(values, dtype=float) - np.asarray(mean_values, dtype=float)
    sigma = observation_covariance(times, cov, sigma2)
    try:
        alpha = np.linalg.solve(sigma, resid)
    except np.linalg.LinAlgError as err:
        raise SingularCovariance(f"observation covariance is singular: {err}") from None
    phi = eig.at(times)[:, :n_components]
    return eig.values[:n_components] * (phi.T @ alpha)


def estimate_scores(subject: Subject, bin_est: BinEstimate, stream: str,
                    n_components: int) -> np.ndarray:
    """BLUP scores of one subject against a bin's raw estimates."""
    if stream == "x":
        return blup_scores(subject.x_times, subject.x_values,
                           bin_est.mean_x.at(subject.x_times), bin_est.eig_x,
                           bin_est.cov_x, bin_est.sigma2_x, n_components)
    if bin_est.eig_y is None:
        raise ValueError("scalar-response bins carry no response eigensystem")
    return blup_scores(subject.y_times, subject.y_values,
                       bin_est.mean_y.at(subject.y_times), bin_est.eig_y,
                       bin_est.cov_y, bin_est.sigma2_y, n_components)


def default_bandwidth(domain_length: float, n_points: int) -> float:
    """Deterministic bandwidth scale: (range) * n^(-1/5)."""
    return domain_length * max(int(n_points), 2) ** (-0.2)


@dataclass(frozen=True)
class BinBandwidths:
    """Resolved smoothing bandwidths for one bin."""

    mean_x: float
    mean_y: float | None
    cov_x: float
    cov_y: float | None
    diag_x: float
    diag_y: float | None
    cross: tuple[float, float] | float

    def as_dict(self) -> dict:
        return {
            "mean_x": self.mean_x, "mean_y": self.mean_y,
            "cov_x": self.cov_x, "cov_y": self.cov_y,
            "diag_x": self.diag_x, "diag_y": self.diag_y,
            "cross": list(self.cross) if isinstance(self.cross, tuple) else self.cross,
        }


def fit_bin(subjects: list[Subject], center: float, s_grid: Grid,
            t_grid: Grid | None, bandwidths: BinBandwidths, kernel: Kernel1D,
            max_m: int, max_k: int, ridge: float = 1e-10,
            eigen_floor: float = 1e-10) -> BinEstimate:
    """All raw estimates for one bin.

    ``max_m``/``max_k`` bound how many eigencomponents are retained (the
    spectra may hold fewer, and ``eigen_floor`` drops eigenvalues below that
    fraction of the leading one); ``sigma_mk`` is built at those bounds so
    that truncation selection can slice it without refitting.
    """
    scalar = t_grid is None
    kern2 = Kernel2D(kernel, kernel)

    x_times = np.concatenate([s.x_times for s in subjects])
    x_values = np.concatenate([s.x_values for s in subjects])
    mean_x = estimate_mean(x_times, x_values,
                           LocalFitConfig(bandwidths.mean_x, kernel, ridge), s_grid)

    if scalar:
        mean_y = float(np.mean([s.y_scalar for s in subjects]))
    else:
        y_times = np.concatenate([s.y_times for s in subjects])
        y_values = np.concatenate([s.y_values for s in subjects])
        mean_y = estimate_mean(y_times, y_values,
                               LocalFitConfig(bandwidths.mean_y, kernel, ridge), t_grid)

    off_x, diag_x = raw_covariances(subjects, mean_x, "x")
    cov_x = smooth_covariance(off_x, LocalFitConfig(bandwidths.cov_x, kern2, ridge), s_grid)
    sigma2_x = estimate_sigma2(diag_x, off_x,
                               LocalFitConfig(bandwidths.diag_x, kernel, ridge), s_grid)
    eig_x = eigendecompose(cov_x, s_grid, max_m, rel_tol=max(1e-10, eigen_floor))

    if scalar:
        cov_y = None
        eig_y = None
        sigma2_y = None
    else:
        off_y, diag_y = raw_covariances(subjects, mean_y, "y")
        cov_y = smooth_covariance(off_y, LocalFitConfig(bandwidths.cov_y, kern2, ridge), t_grid)
        sigma2_y = estimate_sigma2(diag_y, off_y,
                                   LocalFitConfig(bandwidths.diag_y, kernel, ridge), t_grid)
        eig_y = eigendecompose(cov_y, t_grid, max_k, rel_tol=max(1e-10, eigen_floor))

    cross_bw = bandwidths.cross
    cross_cfg = LocalFitConfig(
        cross_bw if isinstance(cross_bw, tuple) or scalar else (cross_bw, cross_bw),
        kernel if scalar else kern2, ridge)
    cross = smooth_cross_covariance(
        subjects, mean_x, mean_y, cross_cfg,
        s_grid if scalar else (s_grid, t_grid))

    m_avail = eig_x.n_components
    if m_avail == 0:
        raise InsufficientLocalData(
            f"bin at z={center:g}: predictor covariance has no positive eigenvalues")
    if scalar:
        moments = sigma_mk(eig_x, None, cross, m_avail)
    else:
        k_avail = eig_y.n_components
        if k_avail == 0:
            raise InsufficientLocalData(
                f"bin at z={center:g}: response covariance has no positive eigenvalues")
        moments = sigma_mk(eig_x, eig_y, cross, m_avail, k_avail)

    return BinEstimate(
        center=float(center), n_subjects=len(subjects),
        mean_x=mean_x, mean_y=mean_y, cov_x=cov_x, cov_y=cov_y, cross=cross,
        eig_x=eig_x, eig_y=eig_y, sigma_mk=moments,
        sigma2_x=sigma2_x, sigma2_y=sigma2_y,
        bandwidths=bandwidths.as_dict(),
    )
