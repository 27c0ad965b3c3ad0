import math

import numpy as np
import pytest

from mcsmooth import (
    FrequencyEstimationError,
    HyperConfig,
    KickSeries,
    ObservationSeries,
    WeightSchedule,
    density_estimate,
    estimate,
    initialize,
    reconstruct_trajectory,
    run_stage,
    to_polar,
)
from mcsmooth.optimizer import (
    read_densities_csv,
    read_reconstruction_csv,
    read_states_csv,
    read_trace_csv,
    write_densities_csv,
    write_reconstruction_csv,
    write_states_csv,
    write_trace_csv,
)
from conftest import TRUE_A, TRUE_B, TRUE_OMEGA, make_cycle_series


class TestInitialize:
    def test_states_start_at_data(self, cycle_series):
        state, cfg, tables = initialize(cycle_series)
        assert np.array_equal(state.x, cycle_series.values)
        assert np.all(state.z == 0.0)

    def test_scalar_initializations(self, cycle_series):
        y = cycle_series.values
        state, cfg, tables = initialize(cycle_series)
        assert state.priors.b_tilde == pytest.approx(y.mean())
        assert state.priors.sigma_b == pytest.approx(y.std())
        assert state.priors.sigma_a == state.priors.sigma_b
        assert state.priors.sigma_omega == state.priors.omega_tilde
        assert state.noise.sigma == pytest.approx(state.params.a.mean())
        assert state.noise.sigma0 == pytest.approx(0.1 * state.noise.sigma)

    def test_time_scales_from_frequency(self, cycle_series):
        state, cfg, tables = initialize(cycle_series)
        period = 2 * np.pi / state.priors.omega_tilde
        assert cfg.T_s == pytest.approx(period, rel=1e-12)
        assert cfg.T_l == pytest.approx(4 * period, rel=1e-12)
        assert tables.T_s == cfg.T_s and tables.T_l == cfg.T_l

    def test_frequency_recovery_on_clean_sine(self):
        P = 200.0
        t = (P / 20.0) * np.arange(200)  # 10 periods at P/20
        obs = ObservationSeries(t, np.sin(2 * np.pi * t / P))
        state, cfg, tables = initialize(obs)
        assert abs(state.priors.omega_tilde - 2 * np.pi / P) / (2 * np.pi / P) < 0.05

    def test_constant_data_cannot_estimate_frequency(self):
        t = 5.0 * np.arange(50)
        obs = ObservationSeries(t, np.full(50, 100.0))
        with pytest.raises(FrequencyEstimationError, match="sign changes"):
            initialize(obs)

    def test_roundoff_noise_is_signless(self):
        rng = np.random.default_rng(0)
        t = 5.0 * np.arange(50)
        obs = ObservationSeries(t, 100.0 + 1e-12 * rng.normal(size=50))
        with pytest.raises(FrequencyEstimationError):
            initialize(obs)

    def test_omega_override_skips_sign_changes(self):
        t = 5.0 * np.arange(50)
        rng = np.random.default_rng(1)
        obs = ObservationSeries(t, 100.0 + rng.normal(0, 1e-9, 50))
        state, cfg, tables = initialize(obs, config=HyperConfig(omega_tilde=0.05))
        assert np.all(state.params.omega == 0.05)
        assert cfg.T_s == pytest.approx(2 * np.pi / 0.05)

    def test_requires_four_observations(self):
        obs = ObservationSeries([0.0, 5.0, 10.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="at least 4"):
            initialize(obs)

    def test_basic_state_switch(self, cycle_series):
        osc, _, _ = initialize(cycle_series)
        flat, _, _ = initialize(cycle_series, config=HyperConfig(a_tilde_zero=True))
        assert osc.priors.a_tilde > 0
        assert flat.priors.a_tilde == 0.0


class TestRunStage:
    def test_mask_is_airtight(self, cycle_series, quick_config):
        state, cfg, tables = initialize(cycle_series, config=quick_config)
        from mcsmooth import effective_gaps

        gaps = effective_gaps(cycle_series, KickSeries.empty())
        sched = WeightSchedule(lam3=1.0, epsilon=cfg.epsilon)
        out, trace = run_stage(state, cycle_series, tables, gaps, sched, {"z"}, 10, cfg)
        assert out.x is state.x
        assert out.params is state.params
        assert not np.array_equal(out.z, state.z)

    def test_vanishing_step_leaves_state_unchanged(self, cycle_series):
        from dataclasses import replace

        from mcsmooth import effective_gaps, grad_total

        cfg = HyperConfig(eta=1e-300, line_search=False)
        state, cfg, tables = initialize(cycle_series, config=cfg)
        state = replace(state, x=state.x + 3.0)  # move off the L1/L2 peak
        gaps = effective_gaps(cycle_series, KickSeries.empty())
        sched = WeightSchedule(lam1=1.0, lam2=1.0, epsilon=cfg.epsilon)
        g = grad_total(state, cycle_series, tables, gaps, sched)
        assert np.any(g.d_x != 0.0)
        out, trace = run_stage(state, cycle_series, tables, gaps, sched, {"x"}, 1, cfg)
        assert np.array_equal(out.x, state.x)
        assert trace.objective[0] == trace.objective[-1]

    def test_objective_increases_in_stage_one(self, cycle_series, quick_config):
        state, cfg, tables = initialize(cycle_series, config=quick_config)
        from mcsmooth import effective_gaps, ModelNoise
        from dataclasses import replace

        gaps = effective_gaps(cycle_series, KickSeries.empty())
        a_bar = float(state.params.a.mean())
        state = replace(state, noise=ModelNoise(2 * a_bar))
        sched = WeightSchedule(lam3=1.0, epsilon=cfg.epsilon)
        out, trace = run_stage(state, cycle_series, tables, gaps, sched, {"z"}, 30, cfg)
        assert trace.objective[-1] > trace.objective[0]
        assert np.all(np.diff(trace.objective) >= 0)

    def test_unknown_mask_rejected(self, cycle_series, quick_config):
        state, cfg, tables = initialize(cycle_series, config=quick_config)
        from mcsmooth import effective_gaps

        gaps = effective_gaps(cycle_series, KickSeries.empty())
        with pytest.raises(ValueError, match="unknown blocks"):
            run_stage(state, cycle_series, tables, gaps, WeightSchedule(lam3=1.0),
                      {"q"}, 1, cfg)

    def test_stalls_when_no_step_improves(self, cycle_series):
        from dataclasses import replace

        from mcsmooth import StalledError, effective_gaps

        cfg = HyperConfig(eta=1e18, max_backtracks=1)
        state, cfg, tables = initialize(cycle_series, config=cfg)
        state = replace(state, x=state.x + 3.0)  # nonzero gradient, huge steps only
        gaps = effective_gaps(cycle_series, KickSeries.empty())
        sched = WeightSchedule(lam1=1.0, epsilon=0.1)
        with pytest.raises(StalledError, match="3 consecutive"):
            run_stage(state, cycle_series, tables, gaps, sched, {"x"}, 10, cfg)


class TestHyperConfig:
    def test_rejects_bad_time_scales(self):
        with pytest.raises(ValueError, match="T_l"):
            HyperConfig(T_s=100.0, T_l=50.0)
        with pytest.raises(ValueError, match="T_s"):
            HyperConfig(T_s=-1.0)

    def test_rejects_bad_line_search_settings(self):
        with pytest.raises(ValueError, match="backtrack_factor"):
            HyperConfig(backtrack_factor=1.0)
        with pytest.raises(ValueError, match="max_backtracks"):
            HyperConfig(max_backtracks=0)

    def test_rejects_bad_caps_and_eta(self):
        with pytest.raises(ValueError, match="caps"):
            HyperConfig(max_iter_stage2=0)
        with pytest.raises(ValueError, match="eta"):
            HyperConfig(eta=0.0)


class TestEstimate:
    def test_deterministic(self, quick_config):
        obs = make_cycle_series(n=80)
        r1 = estimate(obs, config=quick_config)
        r2 = estimate(obs, config=quick_config)
        assert np.array_equal(r1.state.x, r2.state.x)
        assert np.array_equal(r1.state.z, r2.state.z)
        assert np.array_equal(r1.state.params.omega, r2.state.params.omega)
        assert r1.traces[-1].objective == r2.traces[-1].objective

    def test_monotone_traces(self, quick_config):
        obs = make_cycle_series(n=80)
        res = estimate(obs, config=quick_config)
        assert [t.name for t in res.traces] == ["stage1a", "stage1b", "stage2"]
        for trace in res.traces:
            assert np.all(np.diff(trace.objective) >= 0)

    def test_stage_noise_protocol(self, quick_config):
        obs = make_cycle_series(n=80)
        res = estimate(obs, config=quick_config)
        # stage 2 resets sigma to the initialization amplitude mean
        state0, _, _ = initialize(obs, config=quick_config)
        assert res.state.noise.sigma == pytest.approx(state0.params.a.mean())

    def test_stationary_point_of_pure_L1(self):
        obs = make_cycle_series(n=60)
        one_hot = (1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        cfg = HyperConfig(
            epsilon=0.0,
            weights_stage1a=one_hot, weights_stage1b=one_hot, weights_stage2=one_hot,
            max_iter_stage1a=5, max_iter_stage1b=5, max_iter_stage2=20,
        )
        res = estimate(obs, config=cfg)
        assert np.array_equal(res.state.x, obs.values)

    def test_recovers_truth_parameters(self, quick_config):
        obs = make_cycle_series()
        res = estimate(obs, config=quick_config)
        p = res.state.params
        assert abs(p.b.mean() - TRUE_B) / TRUE_B < 0.05
        assert abs(p.a.mean() - TRUE_A) / TRUE_A < 0.20
        assert abs(p.omega.mean() - TRUE_OMEGA) / TRUE_OMEGA < 0.10

    def test_non_oscillatory_basic_state(self):
        obs = make_cycle_series(n=80)
        cfg = HyperConfig(a_tilde_zero=True, max_iter_stage1a=20,
                          max_iter_stage1b=20, max_iter_stage2=60)
        res = estimate(obs, config=cfg)
        assert res.state.priors.a_tilde == 0.0
        # amplitude floor keeps the trajectory valid even as it decays
        assert np.all(res.state.params.a > 0)
        for trace in res.traces:
            assert np.all(np.diff(trace.objective) >= 0)

    def test_kicks_flow_through(self, quick_config):
        obs = make_cycle_series(n=80)
        kicks = KickSeries([obs.times[20] + 2.0, obs.times[50] + 2.0], [1.0, 3.0],
                           typical_intensity=2.0)
        res = estimate(obs, kicks, config=quick_config)
        # alpha_kick resolved from the estimated short time scale
        assert res.kicks.alpha_kick == pytest.approx(res.config.T_s / 2.0)
        inflated = res.gaps.dt_relax - res.gaps.dt_phase
        assert inflated[21] == pytest.approx(res.kicks.alpha_kick * 1.0)
        assert inflated[51] == pytest.approx(res.kicks.alpha_kick * 3.0)
        assert np.count_nonzero(inflated) == 2
        for trace in res.traces:
            assert np.all(np.diff(trace.objective) >= 0)


class TestReconstruct:
    def result(self, threshold=1e9):
        obs = make_cycle_series(n=60)
        cfg = HyperConfig(max_iter_stage1a=10, max_iter_stage1b=10, max_iter_stage2=20,
                          dashed_gap_threshold=threshold)
        return estimate(obs, config=cfg)

    def test_observation_times_exact(self):
        res = self.result()
        values, dashed = reconstruct_trajectory(res, res.obs.times)
        assert np.array_equal(values, res.state.x)
        assert not dashed.any()

    def test_long_gaps_flagged(self):
        res = self.result(threshold=1.0)  # every 5-min gap is "long"
        grid = res.obs.times[0] + np.array([2.5, 5.0, 7.5])
        values, dashed = reconstruct_trajectory(res, grid)
        assert dashed.tolist() == [True, False, True]

    def test_matches_closed_form_inside_gap(self):
        res = self.result()
        st = res.state
        j = 10
        t0 = res.obs.times[j]
        tau = 2.0
        pol = to_polar(st.x[j], st.z[j], st.params.b[j])
        ds = math.exp(-tau / res.config.T_s)
        r_t = (1 - ds) * st.params.a[j + 1] + ds * pol.r
        want = st.params.b[j + 1] + r_t * math.cos(pol.theta + st.params.omega[j] * tau)
        got, _ = reconstruct_trajectory(res, [t0 + tau])
        assert got[0] == pytest.approx(want, rel=1e-12)

    def test_grid_outside_span_rejected(self):
        res = self.result()
        with pytest.raises(ValueError, match="outside"):
            reconstruct_trajectory(res, [res.obs.times[-1] + 1.0])


class TestDensityEstimate:
    def test_single_datum_peak(self):
        from mcsmooth import build_tables

        obs = make_cycle_series(n=30)
        tables = build_tables(obs, KickSeries.empty(), 140.0, 560.0)
        rho = density_estimate([100.0], [50.0], tables, at_time=50.0, grid=[100.0])
        assert rho[0] == pytest.approx(1.0 / (np.sqrt(2 * np.pi) * tables.h), rel=1e-12)

    def test_normalization_by_quadrature(self):
        from mcsmooth import build_tables

        obs = make_cycle_series(n=30)
        tables = build_tables(obs, KickSeries.empty(), 140.0, 560.0)
        grid = np.linspace(obs.values.min() - 6 * tables.h, obs.values.max() + 6 * tables.h, 2001)
        rho = density_estimate(obs.values, obs.times, tables, at_time=70.0, grid=grid)
        integral = float(np.sum(0.5 * (rho[1:] + rho[:-1]) * np.diff(grid)))
        assert integral == pytest.approx(1.0, abs=1e-3)

    def test_identical_inputs_identical_densities(self):
        from mcsmooth import build_tables

        obs = make_cycle_series(n=30)
        tables = build_tables(obs, KickSeries.empty(), 140.0, 560.0)
        grid = np.linspace(80, 200, 101)
        rx = density_estimate(obs.values, obs.times, tables, 70.0, grid)
        ry = density_estimate(obs.values.copy(), obs.times, tables, 70.0, grid)
        assert np.array_equal(rx, ry)


class TestCsvFormats:
    def test_states_roundtrip(self, tmp_path, quick_config):
        res = estimate(make_cycle_series(n=40), config=quick_config)
        p = tmp_path / "states.csv"
        write_states_csv(res, p)
        back = read_states_csv(p)
        assert np.array_equal(back["t"], res.obs.times)
        assert np.array_equal(back["x"], res.state.x)
        assert np.array_equal(back["omega"], res.state.params.omega)

    def test_reconstruction_roundtrip(self, tmp_path, quick_config):
        res = estimate(make_cycle_series(n=40), config=quick_config)
        grid = np.arange(res.obs.times[0], res.obs.times[-1], 2.5)
        values, dashed = reconstruct_trajectory(res, grid)
        p = tmp_path / "recon.csv"
        write_reconstruction_csv(grid, values, dashed, p)
        back = read_reconstruction_csv(p)
        assert np.array_equal(back["t"], grid)
        assert np.array_equal(back["value"], values)
        assert np.array_equal(back["dashed"], dashed)

    def test_densities_roundtrip(self, tmp_path, quick_config):
        res = estimate(make_cycle_series(n=40), config=quick_config)
        grid = np.linspace(100, 180, 11)
        rx = density_estimate(res.state.x, res.obs.times, res.tables, 100.0, grid)
        ry = density_estimate(res.obs.values, res.obs.times, res.tables, 100.0, grid)
        p = tmp_path / "dens.csv"
        write_densities_csv(grid, rx, ry, p)
        back = read_densities_csv(p)
        assert np.array_equal(back["rho_x"], rx)
        assert np.array_equal(back["rho_y"], ry)

    def test_trace_roundtrip(self, tmp_path, quick_config):
        res = estimate(make_cycle_series(n=40), config=quick_config)
        p = tmp_path / "trace.csv"
        write_trace_csv(res.traces, p)
        back = read_trace_csv(p)
        total_rows = sum(len(t.objective) for t in res.traces)
        assert back["values"].shape == (total_rows, 8)
        assert set(back["stage"]) == {"stage1a", "stage1b", "stage2"}
