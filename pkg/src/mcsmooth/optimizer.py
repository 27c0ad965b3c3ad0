"""Staged gradient-ascent estimation, trajectory reconstruction, densities.

The procedure initializes surrogates at the data and parameters from kernel
regressions, then ascends the objective in three stages: first the model
component for x over the latents only, then both model components over the
latents, and finally the full weighted objective over everything. Stage one
runs with a doubled transition standard deviation so that the uninformative
initial latents do not sit in the far tails; stage two resets it.

Backtracking line search keeps the objective trace nondecreasing within every
stage; the step size is shared across coordinate blocks and adapts by
doubling after success and halving on backtracks. Runs are deterministic
functions of their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .gradients import grad_total
from .kernels import KernelTables, build_tables, gaussian_kernel
from .objective import (
    Components,
    EstimationState,
    WeightSchedule,
    eval_components,
    eval_total,
)
from .oscillator import (
    EffectiveGaps,
    ModelNoise,
    ParamPriors,
    ParamTrajectory,
    effective_gaps,
    to_polar,
)
from .timeseries import KickSeries, ObservationSeries

__all__ = [
    "HyperConfig",
    "StageTrace",
    "EstimationResult",
    "FrequencyEstimationError",
    "StalledError",
    "initialize",
    "run_stage",
    "estimate",
    "reconstruct_trajectory",
    "density_estimate",
]

STAGE1A_LAMBDAS = (0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
STAGE1B_LAMBDAS = (0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0)
STAGE2_LAMBDAS = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)

# Residuals below this fraction of the data scale carry no sign information.
SIGN_DEAD_ZONE = 1e-9


class FrequencyEstimationError(ValueError):
    """Raised when the data expose too few sign changes to estimate omega."""


class StalledError(RuntimeError):
    """Raised when line search cannot find any nondecreasing step repeatedly."""


@dataclass(frozen=True)
class HyperConfig:
    """Tunables for initialization and the staged descent.

    T_s and T_l default to one and four mean oscillation periods estimated
    from the data; set them to override. ``bootstrap_period`` seeds the
    provisional kernel bandwidth used before the mean period is known.
    """

    T_s: float | None = None
    T_l: float | None = None
    epsilon: float = 0.1
    eta: float = 1.0
    line_search: bool = True
    backtrack_factor: float = 0.5
    max_backtracks: int = 20
    max_iter_stage1a: int = 200
    max_iter_stage1b: int = 200
    max_iter_stage2: int = 2000
    tolerance: float = 1e-8
    bootstrap_period: float = 120.0
    amplitude_window: float | None = None
    a_tilde_zero: bool = False
    omega_tilde: float | None = None
    weights_stage1a: tuple[float, ...] = STAGE1A_LAMBDAS
    weights_stage1b: tuple[float, ...] = STAGE1B_LAMBDAS
    weights_stage2: tuple[float, ...] = STAGE2_LAMBDAS
    density_grid_points: int = 201
    density_grid_pad: float = 3.0
    dashed_gap_threshold: float = 120.0

    def __post_init__(self):
        if self.T_s is not None and self.T_s <= 0:
            raise ValueError("HyperConfig: T_s must be positive")
        if self.T_l is not None and self.T_s is not None and self.T_l < self.T_s:
            raise ValueError("HyperConfig: T_l must be at least T_s")
        if self.eta <= 0:
            raise ValueError("HyperConfig: eta must be positive")
        if min(self.max_iter_stage1a, self.max_iter_stage1b, self.max_iter_stage2) < 1:
            raise ValueError("HyperConfig: iteration caps must be at least 1")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("HyperConfig: backtrack_factor must lie in (0, 1)")
        if self.max_backtracks < 1:
            raise ValueError("HyperConfig: max_backtracks must be at least 1")
        if self.bootstrap_period <= 0:
            raise ValueError("HyperConfig: bootstrap_period must be positive")


@dataclass
class StageTrace:
    """Objective and component history of one descent stage."""

    name: str
    objective: list[float] = field(default_factory=list)
    components: list[Components] = field(default_factory=list)
    iterations: int = 0
    line_search_failures: int = 0
    converged: bool = False


@dataclass(frozen=True)
class EstimationResult:
    state: EstimationState
    config: HyperConfig
    tables: KernelTables
    gaps: EffectiveGaps
    obs: ObservationSeries
    kicks: KickSeries
    traces: tuple[StageTrace, ...]
    components: Components

    @property
    def iterations(self) -> int:
        return sum(t.iterations for t in self.traces)

    @property
    def line_search_failures(self) -> int:
        return sum(t.line_search_failures for t in self.traces)


def _kernel_regress(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    return weights @ values / weights.sum(axis=1)


def _plain_time_kernel(times: np.ndarray, bandwidth: float) -> np.ndarray:
    d = times[:, None] - times[None, :]
    return np.exp(-(d * d) / (2.0 * bandwidth * bandwidth))


def _sign_change_times(times: np.ndarray, resid: np.ndarray, atol: float) -> np.ndarray:
    """Zero crossings of the residual, located by linear interpolation.

    Residuals within ``atol`` of zero carry no sign; crossings are read off
    consecutive samples of opposite definite sign. Noise flutter near a slow
    crossing produces pairs of extra crossings separated by less than the
    sampling resolution; such pairs are unresolvable half-periods and are
    dropped (shortest span first) before the spans are used.
    """
    sign = np.sign(resid)
    sign[np.abs(resid) <= atol] = 0.0
    idx = np.nonzero(sign)[0]
    crossings = []
    for i, j in zip(idx[:-1], idx[1:]):
        if sign[i] * sign[j] < 0:
            si, sj = resid[i], resid[j]
            crossings.append(times[i] + (times[j] - times[i]) * si / (si - sj))
    crossings = np.asarray(crossings)
    if crossings.size < 2 or times.size < 2:
        return crossings
    spans = np.diff(crossings)
    floor = min(2.0 * float(np.median(np.diff(times))), 0.5 * float(np.median(spans)))
    kept = list(crossings)
    while len(kept) >= 2:
        spans = np.diff(kept)
        k = int(np.argmin(spans))
        if spans[k] >= floor:
            break
        del kept[k : k + 2]
    return np.asarray(kept)


def _half_period_per_index(times: np.ndarray, crossings: np.ndarray) -> np.ndarray:
    """Span of the crossing interval bracketing each time.

    Indices outside the first and last crossing inherit the nearest valid
    span.
    """
    spans = np.diff(crossings)
    pos = np.searchsorted(crossings, times, side="right") - 1
    pos = np.clip(pos, 0, spans.size - 1)
    return spans[pos]


def initialize(
    obs: ObservationSeries,
    kicks: KickSeries | None = None,
    config: HyperConfig | None = None,
) -> tuple[EstimationState, HyperConfig, KernelTables]:
    """Initial state, resolved time scales, and kernel tables for a series.

    Surrogates start at the data and latents at zero. The local mean is a
    time-kernel regression of the data, the local amplitude a regression of
    windowed residual maxima, and the local frequency a regression of
    half-period reciprocals read off the sign changes of the residual. The
    regressions bootstrap: a provisional bandwidth from ``bootstrap_period``
    yields the frequency and hence T_s and T_l, after which the mean and
    amplitude are recomputed once with the final (kick-adjusted) kernels.
    """
    kicks = kicks if kicks is not None else KickSeries.empty()
    cfg = config if config is not None else HyperConfig()
    if obs.n < 4:
        raise ValueError("initialize: need at least 4 observations")
    t, y = obs.times, obs.values
    b_tilde = float(y.mean())
    sigma_b = float(y.std())

    # Provisional pass: no kick adjustment, bandwidth from the default period.
    Kt0 = _plain_time_kernel(t, 4.0 * cfg.bootstrap_period)
    b_prov = _kernel_regress(Kt0, y)

    if cfg.omega_tilde is not None:
        omega_traj = np.full(obs.n, float(cfg.omega_tilde))
        omega_tilde = float(cfg.omega_tilde)
    else:
        atol = SIGN_DEAD_ZONE * max(1.0, float(np.max(np.abs(y))))
        crossings = _sign_change_times(t, y - b_prov, atol)
        if crossings.size < 2:
            raise FrequencyEstimationError(
                "initialize: fewer than 2 sign changes of y - b; "
                "cannot estimate frequency (supply omega_tilde)"
            )
        omega_hat = np.pi / _half_period_per_index(t, crossings)
        omega_traj = _kernel_regress(Kt0, omega_hat)
        omega_tilde = float(omega_traj.mean())

    T_s = cfg.T_s if cfg.T_s is not None else 2.0 * np.pi / omega_tilde
    T_l = cfg.T_l if cfg.T_l is not None else 4.0 * 2.0 * np.pi / omega_tilde

    kicks_scaled = kicks.with_time_scale(T_s)
    tables = build_tables(obs, kicks_scaled, T_s, T_l)

    # Final pass with the kick-adjusted kernels.
    b = _kernel_regress(tables.Kt, y)
    window = cfg.amplitude_window if cfg.amplitude_window is not None else T_s
    resid = np.abs(y - b)
    in_window = np.abs(t[:, None] - t[None, :]) < window
    a_hat = np.where(in_window, resid[None, :], -np.inf).max(axis=1)
    a = _kernel_regress(tables.Kt, a_hat)

    a_tilde = 0.0 if cfg.a_tilde_zero else float(a_hat.mean())
    a_bar = float(a.mean())
    if a_bar <= 0:
        raise ValueError("initialize: zero mean amplitude; data carry no oscillation")

    state = EstimationState(
        x=y.copy(),
        z=np.zeros(obs.n),
        params=ParamTrajectory(b, a, omega_traj),
        priors=ParamPriors(b_tilde, a_tilde, omega_tilde, sigma_b, sigma_b, omega_tilde),
        noise=ModelNoise(a_bar),
    )
    return state, replace(cfg, T_s=float(T_s), T_l=float(T_l)), tables


def _apply_step(
    state: EstimationState,
    grad,
    eta: float,
    mask: frozenset,
    floors: tuple[float, float],
) -> EstimationState:
    changes = {}
    if "x" in mask:
        changes["x"] = state.x + eta * grad.d_x
    if "z" in mask:
        changes["z"] = state.z + eta * grad.d_z
    if "params" in mask:
        floor_a, floor_omega = floors
        changes["params"] = ParamTrajectory(
            state.params.b + eta * grad.d_b,
            np.maximum(state.params.a + eta * grad.d_a, floor_a),
            np.maximum(state.params.omega + eta * grad.d_omega, floor_omega),
        )
    return replace(state, **changes)


def run_stage(
    state: EstimationState,
    obs: ObservationSeries,
    tables: KernelTables,
    gaps: EffectiveGaps,
    schedule: WeightSchedule,
    mask,
    iters: int,
    config: HyperConfig,
    floors: tuple[float, float] | None = None,
    name: str = "stage",
) -> tuple[EstimationState, StageTrace]:
    """Gradient-ascend the schedule's objective over the masked blocks.

    Only blocks named in ``mask`` (subset of x, z, params) are updated; the
    others are reused bit-identically. Stops at the iteration cap or when an
    accepted step improves the objective by less than the tolerance. Raises
    StalledError after three consecutive iterations in which no backtracked
    step was nondecreasing.
    """
    mask = frozenset(mask)
    if not mask <= {"x", "z", "params"}:
        raise ValueError(f"run_stage: unknown blocks in mask {sorted(mask)}")
    if floors is None:
        floors = (
            1e-6 * float(np.mean(state.params.a)),
            1e-6 * float(np.mean(state.params.omega)),
        )

    trace = StageTrace(name=name)
    L = eval_total(state, obs, tables, gaps, schedule)
    trace.objective.append(L)
    trace.components.append(eval_components(state, obs, tables, gaps, schedule.epsilon))

    eta = 0.5 * config.eta
    fails_in_row = 0
    grow = 1.0 / config.backtrack_factor
    for _ in range(iters):
        grad = grad_total(state, obs, tables, gaps, schedule)
        eta_try = 2.0 * eta
        accepted = False
        if not config.line_search:
            eta_try = config.eta
            trial = _apply_step(state, grad, eta_try, mask, floors)
            L_new = eval_total(trial, obs, tables, gaps, schedule)
            if not math.isfinite(L_new):
                raise ValueError("run_stage: non-finite objective without line search")
            accepted = True
        else:
            trial = _apply_step(state, grad, eta_try, mask, floors)
            L_new = eval_total(trial, obs, tables, gaps, schedule)
            if math.isfinite(L_new) and L_new >= L:
                accepted = True
                # The base step may be far below the problem's scale: expand
                # while the objective keeps strictly improving.
                for _attempt in range(config.max_backtracks):
                    eta_next = grow * eta_try
                    candidate = _apply_step(state, grad, eta_next, mask, floors)
                    L_cand = eval_total(candidate, obs, tables, gaps, schedule)
                    if not (math.isfinite(L_cand) and L_cand > L_new):
                        break
                    trial, L_new, eta_try = candidate, L_cand, eta_next
            else:
                for _attempt in range(config.max_backtracks):
                    eta_try *= config.backtrack_factor
                    trial = _apply_step(state, grad, eta_try, mask, floors)
                    L_new = eval_total(trial, obs, tables, gaps, schedule)
                    if math.isfinite(L_new) and L_new >= L:
                        accepted = True
                        break
        eta = eta_try
        if not accepted:
            trace.line_search_failures += 1
            fails_in_row += 1
            if fails_in_row >= 3:
                raise StalledError(
                    "run_stage: line search exhausted for 3 consecutive iterations"
                )
            continue
        fails_in_row = 0
        dL = L_new - L
        state, L = trial, L_new
        trace.iterations += 1
        trace.objective.append(L)
        trace.components.append(eval_components(state, obs, tables, gaps, schedule.epsilon))
        if abs(dL) < config.tolerance * (1.0 + abs(L)):
            trace.converged = True
            break
    return state, trace


def estimate(
    obs: ObservationSeries,
    kicks: KickSeries | None = None,
    config: HyperConfig | None = None,
) -> EstimationResult:
    """Full staged estimation of a series: initialize, stage 1a/1b, stage 2."""
    kicks = kicks if kicks is not None else KickSeries.empty()
    state, cfg, tables = initialize(obs, kicks, config)
    kicks_scaled = kicks.with_time_scale(cfg.T_s)
    gaps = effective_gaps(obs, kicks_scaled)

    a_bar = float(np.mean(state.params.a))
    floors = (1e-6 * a_bar, 1e-6 * state.priors.omega_tilde)
    eps = cfg.epsilon

    w1a = WeightSchedule.from_lambdas(cfg.weights_stage1a, eps)
    w1b = WeightSchedule.from_lambdas(cfg.weights_stage1b, eps)
    w2 = WeightSchedule.from_lambdas(cfg.weights_stage2, eps)

    # Stage 1: latents only, doubled transition noise.
    state = replace(state, noise=ModelNoise(2.0 * a_bar))
    state, tr1a = run_stage(
        state, obs, tables, gaps, w1a, {"z"}, cfg.max_iter_stage1a, cfg, floors, "stage1a"
    )
    state, tr1b = run_stage(
        state, obs, tables, gaps, w1b, {"z"}, cfg.max_iter_stage1b, cfg, floors, "stage1b"
    )

    # Stage 2: full objective over everything, noise reset.
    state = replace(state, noise=ModelNoise(a_bar))
    state, tr2 = run_stage(
        state, obs, tables, gaps, w2, {"x", "z", "params"}, cfg.max_iter_stage2, cfg, floors, "stage2"
    )

    comps = eval_components(state, obs, tables, gaps, eps)
    return EstimationResult(
        state=state,
        config=cfg,
        tables=tables,
        gaps=gaps,
        obs=obs,
        kicks=kicks_scaled,
        traces=(tr1a, tr1b, tr2),
        components=comps,
    )


def reconstruct_trajectory(result: EstimationResult, grid) -> tuple[np.ndarray, np.ndarray]:
    """Model-mean values on a time grid, with flags for long data gaps.

    At observation times the estimated surrogate is returned exactly; inside
    a gap the mean is propagated from the gap's left state with the
    transition's parameter convention (successor mean and amplitude, source
    frequency). Grid points inside gaps longer than the dashed threshold are
    flagged.
    """
    grid = np.asarray(grid, dtype=float)
    t = result.obs.times
    state = result.state
    b, a, om = state.params.b, state.params.a, state.params.omega
    T_s = result.config.T_s
    thr = result.config.dashed_gap_threshold
    kicks = result.kicks

    if grid.size and (grid.min() < t[0] or grid.max() > t[-1]):
        raise ValueError("reconstruct_trajectory: grid time outside the observation span")

    values = np.empty(grid.size)
    dashed = np.zeros(grid.size, dtype=bool)
    for i, g in enumerate(grid):
        j = int(np.searchsorted(t, g, side="right")) - 1
        if g == t[j]:
            values[i] = state.x[j]
            continue
        dt_phase = g - t[j]
        dt_relax = dt_phase + kicks.alpha_kick * kicks.intensity_between(t[j], g)
        pol = to_polar(state.x[j], state.z[j], b[j])
        d_s = math.exp(-dt_relax / T_s)
        r_plus = (1.0 - d_s) * a[j + 1] + d_s * pol.r
        values[i] = b[j + 1] + r_plus * math.cos(pol.theta + om[j] * dt_phase)
        dashed[i] = (t[j + 1] - t[j]) > thr
    return values, dashed


def density_estimate(values, times, tables: KernelTables, at_time: float, grid) -> np.ndarray:
    """Time-weighted kernel density of the values, evaluated on a value grid.

    Serves both the surrogate density (values = x) and the data density
    (values = y).
    """
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    grid = np.asarray(grid, dtype=float)
    d = at_time - times
    wt = np.exp(-(d * d) / (2.0 * tables.T_l ** 2))
    s = wt.sum()
    wt = np.full(times.size, 1.0 / times.size) if s == 0.0 else wt / s
    return gaussian_kernel(values[None, :], grid[:, None], tables.h) @ wt


# ---------------------------------------------------------------------------
# CSV output formats owned by this module (and their re-parsers).

def _write_rows(path, rows) -> None:
    from pathlib import Path

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for row in rows:
            fh.write(",".join(row) + "\n")


def _read_columns(path, ncols: int, what: str) -> np.ndarray:
    from pathlib import Path

    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"read_{what}: file not found: {p}")
    data = np.loadtxt(p, delimiter=",", dtype=str, ndmin=2)
    if data.shape[1] != ncols:
        raise ValueError(f"read_{what}: expected {ncols} columns, got {data.shape[1]}")
    return data


def write_states_csv(result: EstimationResult, path) -> None:
    """Estimated states as "t,x,z,b,a,omega" rows."""
    s, p = result.state, result.state.params
    rows = (
        tuple(repr(float(v)) for v in cols)
        for cols in zip(result.obs.times, s.x, s.z, p.b, p.a, p.omega)
    )
    _write_rows(path, rows)


def read_states_csv(path) -> dict[str, np.ndarray]:
    data = _read_columns(path, 6, "states").astype(float)
    keys = ("t", "x", "z", "b", "a", "omega")
    out = dict(zip(keys, data.T))
    if not np.all(np.diff(out["t"]) > 0):
        raise ValueError("read_states: times must be strictly increasing")
    return out


def write_reconstruction_csv(times, values, dashed, path) -> None:
    """Reconstructed trajectory as "t,value,dashed" rows (dashed is 0/1)."""
    rows = (
        (repr(float(t)), repr(float(v)), str(int(d)))
        for t, v, d in zip(times, values, dashed)
    )
    _write_rows(path, rows)


def read_reconstruction_csv(path) -> dict[str, np.ndarray]:
    data = _read_columns(path, 3, "reconstruction")
    flags = data[:, 2].astype(int)
    if not np.all((flags == 0) | (flags == 1)):
        raise ValueError("read_reconstruction: dashed flags must be 0 or 1")
    return {
        "t": data[:, 0].astype(float),
        "value": data[:, 1].astype(float),
        "dashed": flags.astype(bool),
    }


def write_densities_csv(grid, rho_x, rho_y, path) -> None:
    """Density grids as "value,rho_x,rho_y" rows."""
    rows = (
        tuple(repr(float(v)) for v in cols)
        for cols in zip(grid, rho_x, rho_y)
    )
    _write_rows(path, rows)


def read_densities_csv(path) -> dict[str, np.ndarray]:
    data = _read_columns(path, 3, "densities").astype(float)
    if np.any(data[:, 1:] < 0):
        raise ValueError("read_densities: densities must be nonnegative")
    return {"value": data[:, 0], "rho_x": data[:, 1], "rho_y": data[:, 2]}


def write_trace_csv(traces, path) -> None:
    """Objective traces as "stage,iter,L,L1,L2,L3,L4,Lb,La,Lomega" rows."""
    def rows():
        for trace in traces:
            for it, (L, comps) in enumerate(zip(trace.objective, trace.components)):
                yield (trace.name, str(it), repr(float(L))) + tuple(
                    repr(float(c)) for c in comps
                )
    _write_rows(path, rows())


def read_trace_csv(path) -> dict[str, np.ndarray]:
    data = _read_columns(path, 10, "trace")
    return {
        "stage": data[:, 0],
        "iter": data[:, 1].astype(int),
        "values": data[:, 2:].astype(float),
    }
