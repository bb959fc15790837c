import numpy as np
import pytest
from scipy import integrate
from scipy.stats import ks_2samp, kstest, norm

from dysonlab.core import DysonParams, RngStream, make_uniform_grid
from dysonlab.dyson_sde import (
    IntegratorError,
    boundary_spread,
    drift_vector,
    estimate_mean_curves,
    oracle_second_moment,
    sample_fixed_time_oracle,
    sample_oracle_ensemble,
    simulate_dbm,
    simulate_ensemble,
)


def params_for(beta, x_start, horizon=1.0, **kw):
    x = np.asarray(x_start, dtype=float)
    return DysonParams(beta=beta, n_particles=x.size, x_start=x, horizon=horizon, **kw)


class TestDrift:
    def test_two_particle_drift_signs(self):
        # beta=2 at (1, -1): drift = (beta/2) / (x_i - x_j) = (0.5, -0.5),
        # so the gap grows under pure drift.
        d = drift_vector(np.array([1.0, -1.0]), 2.0)
        np.testing.assert_allclose(d, [0.5, -0.5])
        assert d[0] - d[1] > 0

    def test_antisymmetric_sum(self):
        x = np.array([2.0, 0.5, -1.0, -3.0])
        for beta in (2.0, 4.0):
            assert drift_vector(x, beta).sum() == pytest.approx(0.0, abs=1e-12)


class TestBoundarySpread:
    def test_tied_block_spreads_strictly(self):
        x = boundary_spread(np.zeros(3), 2.0, 1e-3, 1e-12)
        assert np.all(x[:-1] > x[1:])
        assert x.sum() == pytest.approx(0.0, abs=1e-12)

    def test_spread_scale_is_drift_flow_exit(self):
        # pure drift from a 2-tie separates to sqrt(beta*dt)*(h1-h2) with
        # h = +/- 1/sqrt(2): gap = sqrt(2 * beta * dt)
        beta, dt = 2.0, 1e-3
        x = boundary_spread(np.zeros(2), beta, dt, 1e-30)
        assert x[0] - x[1] == pytest.approx(np.sqrt(2.0 * beta * dt), rel=1e-6)

    def test_spread_respects_neighbours(self):
        x = boundary_spread(np.array([1e-4, 0.0, 0.0]), 2.0, 1e-3, 1e-12)
        assert np.all(x[:-1] > x[1:])

    def test_strict_start_untouched(self):
        x0 = np.array([1.0, 0.0, -1.0])
        np.testing.assert_array_equal(boundary_spread(x0, 2.0, 1e-3, 1e-12), x0)


class TestSimulateDbm:
    def test_single_particle_is_brownian(self):
        # increment variance |t - s| within 3 SE, mean stays at the start
        params = params_for(2.0, [0.3])
        grid = make_uniform_grid(0.0, 1.0, 4)
        n = 4000
        ens, rep = simulate_ensemble(params, grid, n, RngStream(5, 1))
        inc = ens.values[:, 0, -1] - ens.values[:, 0, 2]
        v = inc.var(ddof=1)
        se = v * np.sqrt(2.0 / (n - 1))
        assert abs(v - 0.5) <= 3 * se
        assert rep.dt_rejections == 0

    def test_every_recorded_state_ordered(self):
        params = params_for(2.0, np.zeros(4))
        grid = make_uniform_grid(0.0, 1.0, 10)
        path, rep = simulate_dbm(params, grid, RngStream(6, 2))
        assert path.ordered
        assert np.all(path.values[:-1, :] > path.values[1:, :])
        assert rep.min_gap_seen > 0
        assert rep.n_substeps_total >= 10

    def test_grid_must_match_horizon(self):
        params = params_for(2.0, [1.0, -1.0], horizon=2.0)
        with pytest.raises(ValueError):
            simulate_dbm(params, make_uniform_grid(0.0, 1.0, 4), RngStream(1, 1))

    def test_reproducible_bitwise(self):
        params = params_for(2.0, np.zeros(3))
        grid = make_uniform_grid(0.0, 1.0, 5)
        a, _ = simulate_dbm(params, grid, RngStream(11, 3))
        b, _ = simulate_dbm(params, grid, RngStream(11, 3))
        np.testing.assert_array_equal(a.values, b.values)

    def test_aggressive_params_fail_loudly(self):
        # near-tie start with a coarse dt floor cannot keep strict order
        params = DysonParams(
            beta=2.0, n_particles=2, x_start=np.array([1e-9, 0.0]),
            horizon=0.1, dt_base=1e-2, dt_min=1e-2, gap_safety=0.5,
        )
        grid = make_uniform_grid(0.0, 0.1, 2)
        with pytest.raises(IntegratorError):
            simulate_dbm(params, grid, RngStream(2, 4))

    def test_sum_is_brownian_any_beta(self):
        # pairwise drift cancels in the sum, so Var(sum X(t)) = N t
        for beta, seed in ((2.0, 21), (4.0, 22)):
            params = params_for(beta, np.zeros(3))
            grid = make_uniform_grid(0.0, 1.0, 2)
            n = 4000
            ens, _ = simulate_ensemble(params, grid, n, RngStream(seed, 0))
            s = ens.values[:, :, -1].sum(axis=1)
            v = s.var(ddof=1)
            se = v * np.sqrt(2.0 / (n - 1))
            assert abs(v - 3.0) <= 3.5 * se

    def test_second_moment_identity(self):
        # E[sum X^2](t) - sum x*^2 = (N + beta N(N-1)/2) t
        beta, n_part = 4.0, 3
        params = params_for(beta, np.zeros(n_part))
        grid = make_uniform_grid(0.0, 1.0, 2)
        n = 4000
        ens, _ = simulate_ensemble(params, grid, n, RngStream(23, 0))
        q = (ens.values[:, :, -1] ** 2).sum(axis=1)
        target = oracle_second_moment(beta, n_part, 1.0)
        assert abs(q.mean() - target) <= 3.5 * q.std(ddof=1) / np.sqrt(n)


class TestOracle:
    def test_rejects_bad_time(self):
        with pytest.raises(ValueError):
            sample_fixed_time_oracle(2.0, 2, 0.0, RngStream(1, 1))

    def test_n1_beta2_standard_normal(self):
        xs = sample_oracle_ensemble(2.0, 1, 1.0, 4000, RngStream(3, 1))[:, 0]
        assert kstest(xs, norm.cdf).statistic < 0.03

    def test_beta2_n2_gap_density(self):
        # analytic gap density for the 2x2 Hermitian model: s^2 exp(-s^2/4)
        xs = sample_oracle_ensemble(2.0, 2, 1.0, 6000, RngStream(4, 1))
        gaps = xs[:, 0] - xs[:, 1]
        norm_c = integrate.quad(lambda s: s * s * np.exp(-s * s / 4), 0, np.inf)[0]

        grid_s = np.linspace(0, 12, 2001)
        pdf = grid_s ** 2 * np.exp(-grid_s ** 2 / 4) / norm_c
        cdf = integrate.cumulative_trapezoid(pdf, grid_s, initial=0.0)

        def gap_cdf(s):
            return np.interp(s, grid_s, cdf)

        assert kstest(gaps, gap_cdf).statistic < 0.03

    def test_second_moment_all_beta(self):
        for beta, seed in ((2.0, 7), (3.0, 8), (4.0, 9)):
            xs = sample_oracle_ensemble(beta, 3, 2.0, 6000, RngStream(seed, 1))
            q = (xs ** 2).sum(axis=1)
            target = oracle_second_moment(beta, 3, 2.0)
            assert abs(q.mean() - target) <= 3.5 * q.std(ddof=1) / np.sqrt(len(q))

    def test_tridiagonal_matches_hermitian_at_beta2(self):
        # force the general-beta route by passing beta=2.0000000001-like value?
        # no: compare beta=2 Hermitian vs tridiagonal at beta exactly 2 via
        # the private sampler, validating the calibration decision.
        from dysonlab.dyson_sde import _tridiagonal_sample

        gen = RngStream(10, 1).generator()
        tri = np.array([np.sort(_tridiagonal_sample(2.0, 3, gen))[::-1] for _ in range(4000)])
        herm = sample_oracle_ensemble(2.0, 3, 1.0, 4000, RngStream(11, 1))
        for j in range(3):
            assert ks_2samp(tri[:, j], herm[:, j]).statistic < 0.04

    def test_ordered_output(self):
        x = sample_fixed_time_oracle(4.0, 5, 0.7, RngStream(12, 1))
        assert np.all(x[:-1] > x[1:])


class TestMeanCurves:
    def test_single_particle_mean_constant(self):
        params = params_for(2.0, [0.4])
        grid = make_uniform_grid(0.0, 1.0, 4)
        mc = estimate_mean_curves(params, grid, 3000, RngStream(13, 1))
        for k in range(grid.n_times):
            e = mc.estimate(1, k)
            assert abs(e.mean - 0.4) <= 3.5 * max(e.std_error, 1e-12)

    def test_symmetric_start_antisymmetric_means(self):
        params = params_for(2.0, [0.0, 0.0])
        grid = make_uniform_grid(0.0, 1.0, 4)
        mc = estimate_mean_curves(params, grid, 3000, RngStream(14, 1))
        top, bot = mc.estimate(1, 4), mc.estimate(2, 4)
        pooled = np.hypot(top.std_error, bot.std_error)
        assert abs(top.mean + bot.mean) <= 3.5 * pooled

    def test_sum_of_means_conserved(self):
        params = params_for(4.0, [1.0, 0.0, -1.0])
        grid = make_uniform_grid(0.0, 1.0, 4)
        mc = estimate_mean_curves(params, grid, 3000, RngStream(15, 1))
        total = mc.means[:, -1].sum()
        pooled = np.sqrt((mc.std_errors[:, -1] ** 2).sum())
        assert abs(total - 0.0) <= 3.5 * pooled


class TestWorkerInvariance:
    def test_ensemble_identical_across_worker_counts(self):
        params = params_for(2.0, np.zeros(2))
        grid = make_uniform_grid(0.0, 0.5, 3)
        a, _ = simulate_ensemble(params, grid, 600, RngStream(16, 1), n_workers=1)
        b, _ = simulate_ensemble(params, grid, 600, RngStream(16, 1), n_workers=3)
        np.testing.assert_array_equal(a.values, b.values)

    def test_oracle_identical_across_worker_counts(self):
        a = sample_oracle_ensemble(2.0, 3, 1.0, 600, RngStream(17, 1), n_workers=1)
        b = sample_oracle_ensemble(2.0, 3, 1.0, 600, RngStream(17, 1), n_workers=2)
        np.testing.assert_array_equal(a, b)
