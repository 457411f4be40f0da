import numpy as np
import pytest

from vcflr.data import Subject
from vcflr.errors import (
    InsufficientLocalData,
    NotSymmetric,
    SingularCovariance,
    TruncationTooLarge,
)
from vcflr.fpca import (
    EigenSystem,
    aggregate_1d,
    aggregate_2d,
    blup_scores,
    covariance_diagonal,
    eigendecompose,
    estimate_mean,
    estimate_sigma2,
    raw_covariances,
    sigma_mk,
    smooth_covariance,
    smooth_cross_covariance,
)
from vcflr.grids import GridFunction, GridSurface, inner_product, make_grid
from vcflr.smoothing import LocalFitConfig


def basis(s):
    """Three orthonormal functions on [0, 10] (columns)."""
    s = np.asarray(s, dtype=float)
    c = np.sqrt(0.2)
    return np.column_stack([
        -c * np.cos(np.pi * s / 5.0),
        c * np.sin(np.pi * s / 5.0),
        -c * np.cos(2.0 * np.pi * s / 5.0),
    ])


RHO = np.array([4.0, 2.0, 1.0])


class TestAggregation:
    def test_1d_groups_duplicates(self):
        x = np.array([1.0, 2.0, 1.0, 2.0, 2.0])
        y = np.array([1.0, 2.0, 3.0, 4.0, 6.0])
        xu, ybar, w = aggregate_1d(x, y)
        assert np.array_equal(xu, [1.0, 2.0])
        assert np.allclose(ybar, [2.0, 4.0])
        assert np.array_equal(w, [2.0, 3.0])

    def test_2d_groups_duplicates(self):
        x1 = np.array([0.0, 0.0, 1.0, 0.0])
        x2 = np.array([2.0, 2.0, 3.0, 1.0])
        y = np.array([1.0, 3.0, 5.0, 7.0])
        a, b, ybar, w = aggregate_2d(x1, x2, y)
        assert np.array_equal(a, [0.0, 0.0, 1.0])
        assert np.array_equal(b, [1.0, 2.0, 3.0])
        assert np.allclose(ybar, [7.0, 2.0, 5.0])
        assert np.array_equal(w, [1.0, 2.0, 1.0])


class TestEstimateMean:
    def test_affine_truth_exact(self):
        rng = np.random.default_rng(20)
        times = rng.uniform(0, 10, 300)
        values = 1.5 + 0.5 * times
        grid = make_grid(0, 10, 31)
        mean = estimate_mean(times, values, LocalFitConfig(1.0), grid)
        assert np.allclose(mean.values, 1.5 + 0.5 * grid.points, atol=1e-9)

    def test_empty_errors(self):
        with pytest.raises(InsufficientLocalData):
            estimate_mean(np.array([1.0]), np.array([2.0]),
                          LocalFitConfig(1.0), make_grid(0, 10, 11))

    def test_recovers_smooth_mean(self):
        # one bin of 50 subjects from the regular three-component design
        from vcflr.simulation import REGULAR, generate
        ds, _ = generate(REGULAR, 50, seed=21)
        times = np.concatenate([s.x_times for s in ds.subjects])
        values = np.concatenate([s.x_values for s in ds.subjects])
        grid = make_grid(0, 10, 51)
        mean = estimate_mean(times, values, LocalFitConfig(1.0), grid)
        truth = grid.points + np.sin(grid.points)
        rms = np.sqrt(np.mean((mean.values - truth) ** 2))
        assert rms < 0.15


class TestRawCovariances:
    def test_two_point_products(self):
        grid = make_grid(0, 10, 11)
        zero_mean = GridFunction(grid, np.zeros(11))
        sub = Subject("a", 0.5, np.array([2.0, 7.0]), np.array([3.0, 5.0]),
                      np.array([1.0]), np.array([0.0]))
        off, diag = raw_covariances([sub], zero_mean, "x")
        assert off.shape == (2, 3)
        assert sorted(off[:, 2].tolist()) == [15.0, 15.0]
        assert {(r[0], r[1]) for r in off} == {(2.0, 7.0), (7.0, 2.0)}
        assert diag.shape == (2, 2)
        assert np.allclose(sorted(diag[:, 1]), [9.0, 25.0])

    def test_single_observation_no_pairs(self):
        grid = make_grid(0, 10, 11)
        zero_mean = GridFunction(grid, np.zeros(11))
        sub = Subject("a", 0.5, np.array([2.0]), np.array([3.0]),
                      np.array([1.0]), np.array([0.0]))
        off, diag = raw_covariances([sub], zero_mean, "x")
        assert off.shape[0] == 0
        assert diag.shape[0] == 1


class TestSmoothCovariance:
    def test_affine_pairs_exact_and_symmetric(self):
        rng = np.random.default_rng(22)
        s1 = rng.uniform(0, 10, 200)
        s2 = rng.uniform(0, 10, 200)
        vals = 1.0 + 0.2 * s1 + 0.2 * s2
        pairs = np.column_stack([s1, s2, vals])
        pairs = np.vstack([pairs, pairs[:, [1, 0, 2]]])
        grid = make_grid(0, 10, 21)
        surf = smooth_covariance(pairs, LocalFitConfig((3.0, 3.0)), grid)
        want = 1.0 + 0.2 * grid.points[:, None] + 0.2 * grid.points[None, :]
        assert np.allclose(surf.values, want, atol=1e-9)
        assert np.max(np.abs(surf.values - surf.values.T)) < 1e-12

    def test_recovers_three_component_surface(self):
        from vcflr.simulation import SPARSE, generate
        from dataclasses import replace
        noiseless = replace(SPARSE, sigma_x=0.0, sigma_y=0.0)
        ds, _ = generate(noiseless, 100, seed=24)
        grid = make_grid(0, 10, 51)
        times = np.concatenate([s.x_times for s in ds.subjects])
        values = np.concatenate([s.x_values for s in ds.subjects])
        mean = estimate_mean(times, values, LocalFitConfig(1.0), grid)
        off, _ = raw_covariances(ds.subjects, mean, "x")
        surf = smooth_covariance(off, LocalFitConfig((1.5, 1.5)), grid)
        psi = basis(grid.points)
        truth = (psi * RHO) @ psi.T
        rms = np.sqrt(np.mean((surf.values - truth) ** 2))
        assert rms < 0.2


class TestEstimateSigma2:
    def test_constant_offset_recovered_exactly(self):
        # raw diagonal sits exactly sigma2 above an affine covariance
        rng = np.random.default_rng(24)
        s1 = rng.uniform(0, 10, 400)
        s2 = rng.uniform(0, 10, 400)
        cov_vals = 0.5 + 0.1 * s1 + 0.1 * s2
        pairs = np.column_stack([s1, s2, cov_vals])
        pairs = np.vstack([pairs, pairs[:, [1, 0, 2]]])
        sd = rng.uniform(0, 10, 150)
        diag = np.column_stack([sd, 0.5 + 0.2 * sd + 0.7])
        grid = make_grid(0, 10, 41)
        got = estimate_sigma2(diag, pairs, LocalFitConfig(2.0), grid)
        assert got == pytest.approx(0.7, abs=1e-9)

    def test_clamped_at_zero(self):
        rng = np.random.default_rng(25)
        s1 = rng.uniform(0, 10, 400)
        s2 = rng.uniform(0, 10, 400)
        pairs = np.column_stack([s1, s2, np.full(400, 2.0)])
        sd = rng.uniform(0, 10, 100)
        diag = np.column_stack([sd, np.full(100, 1.0)])   # below the surface
        grid = make_grid(0, 10, 41)
        assert estimate_sigma2(diag, pairs, LocalFitConfig(2.0), grid) == 0.0

    def test_recovers_unit_noise_sparse_pooled(self):
        from vcflr.simulation import SPARSE, generate
        grid = make_grid(0, 10, 51)
        estimates = []
        for seed in range(10):
            ds, _ = generate(SPARSE, 300, seed=300 + seed)
            times = np.concatenate([s.x_times for s in ds.subjects])
            values = np.concatenate([s.x_values for s in ds.subjects])
            mean = estimate_mean(times, values, LocalFitConfig(1.0), grid)
            off, diag = raw_covariances(ds.subjects, mean, "x")
            estimates.append(estimate_sigma2(diag, off, LocalFitConfig(2.0), grid))
        assert all(0.7 <= v <= 1.3 for v in estimates)


class TestCovarianceDiagonal:
    def test_symmetric_affine_surface_exact(self):
        rng = np.random.default_rng(26)
        s1 = rng.uniform(0, 10, 300)
        s2 = rng.uniform(0, 10, 300)
        vals = 2.0 + 0.3 * (s1 + s2)
        pairs = np.column_stack([np.concatenate([s1, s2]),
                                 np.concatenate([s2, s1]),
                                 np.concatenate([vals, vals])])
        grid = make_grid(0, 10, 21)
        got = covariance_diagonal(pairs, 3.0, grid)
        assert np.allclose(got, 2.0 + 0.6 * grid.points, atol=1e-8)


class TestEigendecompose:
    def make_surface(self, grid, rho=RHO):
        psi = basis(grid.points)
        return GridSurface(grid, grid, (psi * rho) @ psi.T)

    def test_three_component_recovery(self):
        grid = make_grid(0, 10, 201)
        eig = eigendecompose(self.make_surface(grid), grid, 6)
        assert eig.n_components == 3
        assert np.allclose(eig.values, RHO, atol=1e-4)
        psi = basis(grid.points)
        for k in range(3):
            diff_plus = eig.functions[:, k] - psi[:, k]
            diff_minus = eig.functions[:, k] + psi[:, k]
            err = min(np.sqrt(grid.weights @ diff_plus**2),
                      np.sqrt(grid.weights @ diff_minus**2))
            assert err < 1e-3

    def test_zero_surface_empty(self):
        grid = make_grid(0, 10, 31)
        eig = eigendecompose(GridSurface(grid, grid, np.zeros((31, 31))), grid, 5)
        assert eig.n_components == 0

    def test_rank_one(self):
        grid = make_grid(0, 10, 101)
        u = basis(grid.points)[:, 1]
        surf = GridSurface(grid, grid, 2.5 * np.outer(u, u))
        eig = eigendecompose(surf, grid, 5)
        assert eig.n_components == 1
        assert eig.values[0] == pytest.approx(2.5, abs=1e-6)
        align = min(np.max(np.abs(eig.functions[:, 0] - u)),
                    np.max(np.abs(eig.functions[:, 0] + u)))
        assert align < 1e-6

    def test_orthonormality(self):
        grid = make_grid(0, 10, 101)
        eig = eigendecompose(self.make_surface(grid), grid, 6)
        for a in range(eig.n_components):
            for b in range(eig.n_components):
                ip = inner_product(eig.function(a), eig.function(b))
                assert ip == pytest.approx(1.0 if a == b else 0.0, abs=1e-8)

    def test_sign_convention(self):
        grid = make_grid(0, 10, 101)
        eig = eigendecompose(self.make_surface(grid), grid, 6)
        for k in range(eig.n_components):
            total = grid.weights @ eig.functions[:, k]
            if abs(total) > 1e-12:
                assert total > 0

    def test_not_symmetric(self):
        grid = make_grid(0, 1, 11)
        vals = np.zeros((11, 11))
        vals[0, 1] = 1.0
        with pytest.raises(NotSymmetric):
            eigendecompose(GridSurface(grid, grid, vals), grid, 3)

    def test_orthonormality_random_surfaces_1000(self):
        rng = np.random.default_rng(27)
        grid = make_grid(0, 1, 25)
        for case in range(1000):
            rank = rng.integers(1, 5)
            a = rng.normal(size=(25, rank))
            vals = a @ np.diag(rng.uniform(0.1, 3.0, rank)) @ a.T
            vals = (vals + vals.T) / 2
            eig = eigendecompose(GridSurface(grid, grid, vals), grid, 6)
            if eig.n_components == 0:
                continue
            gram = (eig.functions * grid.weights[:, None]).T @ eig.functions
            assert np.max(np.abs(gram - np.eye(eig.n_components))) < 1e-8, case


class TestCrossCovariance:
    def test_affine_raw_pairs_exact(self):
        rng = np.random.default_rng(28)
        grid_s = make_grid(0, 10, 15)
        grid_t = make_grid(0, 10, 13)
        subjects = []
        # build subjects whose centered cross products are exactly affine:
        # x residual = s + 1 at times s, y residual = 1 at all t
        for i in range(20):
            st_ = np.sort(rng.uniform(0, 10, 5))
            tt = np.sort(rng.uniform(0, 10, 4))
            subjects.append(Subject(f"s{i}", 0.5, st_, st_ + 1.0, tt,
                                    np.ones(4)))
        zero_s = GridFunction(grid_s, np.zeros(15))
        zero_t = GridFunction(grid_t, np.zeros(13))
        surf = smooth_cross_covariance(subjects, zero_s, zero_t,
                                       LocalFitConfig((4.0, 4.0)),
                                       (grid_s, grid_t))
        want = (grid_s.points + 1.0)[:, None] * np.ones((1, 13))
        assert np.allclose(surf.values, want, atol=1e-8)

    def test_independent_streams_near_zero(self):
        rng = np.random.default_rng(29)
        grid = make_grid(0, 10, 31)
        subjects = []
        for i in range(200):
            st_ = np.sort(rng.uniform(0, 10, 6))
            tt = np.sort(rng.uniform(0, 10, 6))
            subjects.append(Subject(f"s{i}", 0.5, st_, rng.normal(size=6),
                                    tt, rng.normal(size=6)))
        zero = GridFunction(grid, np.zeros(31))
        surf = smooth_cross_covariance(subjects, zero, zero,
                                       LocalFitConfig((2.0, 2.0)), (grid, grid))
        rms = np.sqrt(np.mean(surf.values ** 2))
        assert rms < 0.2

    def test_scalar_mode_curve(self):
        rng = np.random.default_rng(30)
        grid = make_grid(0, 10, 21)
        subjects = []
        for i in range(30):
            st_ = np.sort(rng.uniform(0, 10, 6))
            subjects.append(Subject(f"s{i}", 0.5, st_, st_ * 0.5, None,
                                    np.array([2.0])))
        zero = GridFunction(grid, np.zeros(21))
        curve = smooth_cross_covariance(subjects, zero, 0.0,
                                        LocalFitConfig(3.0), grid)
        assert isinstance(curve, GridFunction)
        # residual product is (0.5 s) * 2 = s exactly
        assert np.allclose(curve.values, grid.points, atol=1e-8)


class TestSigmaMk:
    def test_orthonormal_projection(self):
        grid = make_grid(0, 10, 201)
        psi = basis(grid.points)
        eig_x = EigenSystem(grid, RHO.copy(), psi.copy())
        eig_y = EigenSystem(grid, RHO.copy(), psi.copy())
        cross = GridSurface(grid, grid, 4.0 * np.outer(psi[:, 0], psi[:, 0]))
        got = sigma_mk(eig_x, eig_y, cross, 2, 2)
        want = np.array([[4.0, 0.0], [0.0, 0.0]])
        assert np.allclose(got, want, atol=1e-5)

    def test_zero_cross(self):
        grid = make_grid(0, 10, 51)
        psi = basis(grid.points)
        eig = EigenSystem(grid, RHO.copy(), psi.copy())
        cross = GridSurface(grid, grid, np.zeros((51, 51)))
        assert np.allclose(sigma_mk(eig, eig, cross, 3, 3), 0.0)

    def test_linear_covariate_slope_moments(self):
        # cross-covariance at z = 0.5 has sigma_mm = 1.5 rho_m, off-diagonal 0;
        # verified against brute-force double quadrature
        grid = make_grid(0, 10, 201)
        psi = basis(grid.points)
        eig = EigenSystem(grid, RHO.copy(), psi.copy())
        cross_vals = 1.5 * (psi * RHO) @ psi.T
        cross = GridSurface(grid, grid, cross_vals)
        got = sigma_mk(eig, eig, cross, 3, 3)
        assert np.allclose(got, np.diag(1.5 * RHO), atol=1e-5)
        w = grid.weights
        brute = np.empty((3, 3))
        for m in range(3):
            for k in range(3):
                brute[m, k] = (psi[:, m] * w) @ cross_vals @ (psi[:, k] * w)
        assert np.allclose(got, brute, atol=1e-12)

    def test_truncation_too_large(self):
        grid = make_grid(0, 10, 51)
        psi = basis(grid.points)
        eig = EigenSystem(grid, RHO.copy(), psi.copy())
        cross = GridSurface(grid, grid, np.zeros((51, 51)))
        with pytest.raises(TruncationTooLarge):
            sigma_mk(eig, eig, cross, 4, 3)

    def test_sign_flip_moves_rows_and_columns(self):
        rng = np.random.default_rng(31)
        grid = make_grid(0, 10, 101)
        psi = basis(grid.points)
        eig_x = EigenSystem(grid, RHO.copy(), psi.copy())
        eig_y = EigenSystem(grid, RHO.copy(), psi.copy())
        cross = GridSurface(grid, grid, rng.normal(size=(101, 101)))
        base = sigma_mk(eig_x, eig_y, cross, 3, 3)
        flipped_x = EigenSystem(grid, RHO.copy(), psi * np.array([1, -1, 1]))
        got = sigma_mk(flipped_x, eig_y, cross, 3, 3)
        want = base.copy()
        want[1, :] *= -1
        assert np.allclose(got, want, atol=0)
        flipped_y = EigenSystem(grid, RHO.copy(), psi * np.array([1, 1, -1]))
        got = sigma_mk(eig_x, flipped_y, cross, 3, 3)
        want = base.copy()
        want[:, 2] *= -1
        assert np.allclose(got, want, atol=0)


class TestBlupScores:
    def make_rank_one(self, grid):
        phi = np.ones((grid.n, 1)) / np.sqrt(10.0)
        # normalize under trapezoid: integral of phi^2 = 1
        eig = EigenSystem(grid, np.array([1.0]),
                          np.ones((grid.n, 1)) * np.sqrt(1.0 / 10.0))
        return eig

    def test_scalar_shrinkage(self):
        grid = make_grid(0, 10, 11)
        # lambda = 1, phi(t) = 1, sigma2 = 0.5, single observation V = 3
        eig = EigenSystem(grid, np.array([1.0]), np.ones((grid.n, 1)))
        cov = GridSurface(grid, grid, np.ones((11, 11)))   # lambda phi phi'
        score = blup_scores(np.array([4.0]), np.array([3.0]), np.array([0.0]),
                            eig, cov, 0.5, 1)
        assert score[0] == pytest.approx(2.0, abs=1e-12)

    def test_zero_residual_zero_scores(self):
        grid = make_grid(0, 10, 21)
        psi = basis(grid.points)
        eig = EigenSystem(grid, RHO.copy(), psi.copy())
        cov = GridSurface(grid, grid, (psi * RHO) @ psi.T)
        times = np.array([1.0, 3.0, 6.0])
        mu = np.array([2.0, 1.0, 0.0])
        scores = blup_scores(times, mu, mu, eig, cov, 1.0, 3)
        assert np.allclose(scores, 0.0, atol=1e-12)

    def test_linear_in_residuals(self):
        rng = np.random.default_rng(32)
        grid = make_grid(0, 10, 51)
        psi = basis(grid.points)
        eig = EigenSystem(grid, RHO.copy(), psi.copy())
        cov = GridSurface(grid, grid, (psi * RHO) @ psi.T)
        times = np.sort(rng.uniform(0, 10, 7))
        v = rng.normal(size=7)
        s1 = blup_scores(times, v, np.zeros(7), eig, cov, 1.0, 3)
        s2 = blup_scores(times, 2 * v, np.zeros(7), eig, cov, 1.0, 3)
        assert np.allclose(s2, 2 * s1, atol=1e-10)

    def test_dense_noiseless_recovery(self):
        rng = np.random.default_rng(33)
        grid = make_grid(0, 10, 101)
        psi = basis(grid.points)
        eig = EigenSystem(grid, RHO.copy(), psi.copy())
        cov = GridSurface(grid, grid, (psi * RHO) @ psi.T)
        times = np.linspace(0, 10, 31)
        psi_t = basis(times)
        errs = []
        for _ in range(50):
            zeta = rng.normal(0, np.sqrt(RHO))
            v = psi_t @ zeta
            got = blup_scores(times, v, np.zeros(31), eig, cov, 0.0, 3)
            errs.append(got - zeta)
        rms = np.sqrt(np.mean(np.square(errs)))
        assert rms < 0.05

    def test_too_many_components(self):
        grid = make_grid(0, 10, 21)
        eig = EigenSystem(grid, np.array([1.0]), np.ones((21, 1)))
        cov = GridSurface(grid, grid, np.ones((21, 21)))
        with pytest.raises(TruncationTooLarge):
            blup_scores(np.array([1.0]), np.array([1.0]), np.array([0.0]),
                        eig, cov, 0.5, 2)

    def test_no_observations(self):
        grid = make_grid(0, 10, 21)
        eig = EigenSystem(grid, np.array([1.0]), np.ones((21, 1)))
        cov = GridSurface(grid, grid, np.ones((21, 21)))
        with pytest.raises(SingularCovariance):
            blup_scores(np.array([]), np.array([]), np.array([]), eig, cov, 0.5, 1)
