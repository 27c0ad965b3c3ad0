"""Command-line pipeline: simulate, subsample, estimate, densities.

A single JSON config file can supply defaults for any command; explicit
flags win. The default output directory comes from the MCSMOOTH_OUTDIR
environment variable (falling back to the working directory). All commands
emit plot-ready CSVs only.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import __version__
from .optimizer import (
    HyperConfig,
    density_estimate,
    estimate,
    initialize,
    reconstruct_trajectory,
    write_densities_csv,
    write_reconstruction_csv,
    write_states_csv,
    write_trace_csv,
)
from .timeseries import (
    KickSeries,
    MeasurementSpec,
    load_kicks,
    load_observations,
    subsample,
    write_observations,
)
from .ultradian import (
    NutritionSchedule,
    default_initial_state,
    icu_fit_params,
    nominal_params,
    simulate,
    write_trace,
)

__all__ = ["run_command", "main"]

_HYPER_FIELDS = {f.name for f in dataclass_fields(HyperConfig)}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"run_command: config file not found: {p}")
    with p.open(encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("run_command: config file must hold a JSON object")
    return cfg


def _hyper_from_config(cfg: dict, overrides: dict) -> HyperConfig:
    """HyperConfig from the config file's "hyper" section plus flag overrides."""
    hyper = dict(cfg.get("hyper", {}))
    unknown = set(hyper) - _HYPER_FIELDS
    if unknown:
        raise ValueError(f"run_command: unknown hyper config keys: {sorted(unknown)}")
    weights = cfg.get("weights", {})
    for stage in ("stage1a", "stage1b", "stage2"):
        if stage in weights:
            hyper[f"weights_{stage}"] = tuple(float(v) for v in weights[stage])
    if cfg.get("basic_state") == "non-oscillatory":
        hyper["a_tilde_zero"] = True
    for key, value in overrides.items():
        if value is not None:
            hyper[key] = value
    for key in ("weights_stage1a", "weights_stage1b", "weights_stage2"):
        if key in hyper and hyper[key] is not None:
            hyper[key] = tuple(float(v) for v in hyper[key])
    return HyperConfig(**hyper)


def _out_dir(arg: str | None, cfg: dict) -> Path:
    d = arg or cfg.get("paths", {}).get("out_dir") or os.environ.get("MCSMOOTH_OUTDIR") or "."
    path = Path(d)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_float_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _measurement_spec(args, cfg: dict) -> MeasurementSpec:
    meas = cfg.get("measurement", {})
    kind = args.spec or meas.get("kind")
    if kind is None:
        raise ValueError("subsample: measurement kind required (--spec or config)")
    explicit = None
    if args.times is not None:
        explicit = tuple(_parse_float_list(args.times))
    elif args.times_file is not None:
        explicit = tuple(np.loadtxt(args.times_file, ndmin=1, dtype=float))
    elif "explicit_times" in meas:
        explicit = tuple(float(v) for v in meas["explicit_times"])
    gap_bounds = (
        (args.gap_min if args.gap_min is not None else meas.get("gap_min", 60.0)),
        (args.gap_max if args.gap_max is not None else meas.get("gap_max", 90.0)),
    )
    return MeasurementSpec(
        kind=kind,
        explicit_times=explicit,
        gap_bounds=(float(gap_bounds[0]), float(gap_bounds[1])),
        period=float(args.period if args.period is not None else meas.get("period", 5.0)),
        rng_seed=int(args.seed if args.seed is not None else meas.get("seed", 0)),
    )


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    params = icu_fit_params() if args.params == "icu" else nominal_params()
    nutrition_path = args.nutrition or cfg.get("paths", {}).get("nutrition")
    if args.constant_nutrition is not None:
        # extend past the horizon so the final integrator substeps do not
        # sample the half-open interval's end
        schedule = NutritionSchedule.constant(args.constant_nutrition, args.t_end + 1.0)
    elif nutrition_path:
        schedule = NutritionSchedule.from_csv(nutrition_path)
    else:
        schedule = NutritionSchedule.empty()
    result = simulate(
        params,
        schedule,
        default_initial_state(),
        t_end=args.t_end,
        dt=args.dt,
        discard=args.discard,
    )
    out = Path(args.out) if args.out else _out_dir(args.out_dir, cfg) / "simulation.csv"
    write_trace(result, out)
    print(f"wrote {out} ({result.times.size} samples)")
    return 0


def _load_series(path):
    """Read observations from a 2-column CSV or a 7-column simulation trace."""
    try:
        return load_observations(path)
    except ValueError:
        from .ultradian import read_trace

        return read_trace(path).observations()


def _cmd_subsample(args) -> int:
    cfg = _load_config(args.config)
    dense = _load_series(args.dense)
    spec = _measurement_spec(args, cfg)
    series = subsample(dense, spec)
    out = Path(args.out) if args.out else _out_dir(args.out_dir, cfg) / f"obs_{spec.kind}.csv"
    write_observations(series, out)
    print(f"wrote {out} ({series.n} samples)")
    return 0


def _estimate_hyper(args, cfg: dict) -> HyperConfig:
    overrides = {
        "T_s": args.t_s,
        "T_l": args.t_l,
        "epsilon": args.epsilon,
        "eta": args.eta,
        "omega_tilde": args.omega_tilde,
        "max_iter_stage1a": args.iters_stage1a,
        "max_iter_stage1b": args.iters_stage1b,
        "max_iter_stage2": args.iters_stage2,
        "tolerance": args.tolerance,
        "dashed_gap_threshold": args.dashed_threshold,
    }
    if args.basic_state is not None:
        overrides["a_tilde_zero"] = args.basic_state == "non-oscillatory"
    return _hyper_from_config(cfg, overrides)


def _cmd_estimate(args) -> int:
    cfg = _load_config(args.config)
    obs_path = args.obs or cfg.get("paths", {}).get("observations")
    if not obs_path:
        raise ValueError("estimate: observations path required (--obs or config)")
    obs = load_observations(obs_path)

    kicks_path = args.kicks or cfg.get("paths", {}).get("kicks")
    hyper = _estimate_hyper(args, cfg)
    kicks = KickSeries.empty()
    if kicks_path:
        # alpha_kick is rescaled to the resolved T_s inside estimate().
        kicks = load_kicks(kicks_path, T_s=1.0)

    result = estimate(obs, kicks, hyper)
    out = _out_dir(args.out_dir, cfg)

    write_states_csv(result, out / "states.csv")

    step = args.recon_step
    t0, t1 = obs.span
    grid = np.arange(t0, t1 + 0.5 * step, step)
    grid = grid[grid <= t1]
    values, dashed = reconstruct_trajectory(result, grid)
    write_reconstruction_csv(grid, values, dashed, out / "reconstruction.csv")

    at_time = args.density_time if args.density_time is not None else 0.5 * (t0 + t1)
    vgrid = _density_grid(result, result.config)
    rho_x = density_estimate(result.state.x, obs.times, result.tables, at_time, vgrid)
    rho_y = density_estimate(obs.values, obs.times, result.tables, at_time, vgrid)
    write_densities_csv(vgrid, rho_x, rho_y, out / "densities.csv")

    write_trace_csv(result.traces, out / "trace.csv")

    L = result.traces[-1].objective[-1]
    print(
        f"wrote states, reconstruction, densities, trace to {out} "
        f"(n={obs.n}, iterations={result.iterations}, L={L:.6g})"
    )
    return 0


def _density_grid(result, hyper: HyperConfig) -> np.ndarray:
    lo = min(result.state.x.min(), result.obs.values.min())
    hi = max(result.state.x.max(), result.obs.values.max())
    pad = hyper.density_grid_pad * result.tables.h
    return np.linspace(lo - pad, hi + pad, hyper.density_grid_points)


def _cmd_densities(args) -> int:
    cfg = _load_config(args.config)
    obs = load_observations(args.obs)
    hyper = _hyper_from_config(cfg, {"T_s": args.t_s, "T_l": args.t_l})
    if hyper.T_l is None:
        _, hyper, tables = initialize(obs, KickSeries.empty(), hyper)
    else:
        from .kernels import build_tables

        T_s = hyper.T_s if hyper.T_s is not None else hyper.T_l / 4.0
        tables = build_tables(obs, KickSeries.empty(), T_s, hyper.T_l)

    if args.states:
        from .optimizer import read_states_csv

        x = read_states_csv(args.states)["x"]
        if x.size != obs.n:
            raise ValueError("densities: states file length does not match observations")
    else:
        x = obs.values

    t0, t1 = obs.span
    at_times = _parse_float_list(args.at_times) if args.at_times else [0.5 * (t0 + t1)]
    lo = min(float(x.min()), float(obs.values.min()))
    hi = max(float(x.max()), float(obs.values.max()))
    pad = hyper.density_grid_pad * tables.h
    grid = np.linspace(lo - pad, hi + pad, hyper.density_grid_points)

    out_dir = _out_dir(args.out_dir, cfg)
    for at in at_times:
        rho_x = density_estimate(x, obs.times, tables, at, grid)
        rho_y = density_estimate(obs.values, obs.times, tables, at, grid)
        if args.out and len(at_times) == 1:
            out = Path(args.out)
        else:
            stem = Path(args.out).stem if args.out else "densities"
            out = out_dir / f"{stem}_t{at:g}.csv"
        write_densities_csv(grid, rho_x, rho_y, out)
        print(f"wrote {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcsmooth",
        description="Multicomponent smoother for sparse oscillatory time series",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate the glucose-insulin model")
    p.add_argument("--params", choices=["nominal", "icu"], default="nominal")
    p.add_argument("--nutrition", help="nutrition schedule CSV: t_start,t_end,rate_mg_per_min")
    p.add_argument("--constant-nutrition", type=float, help="constant rate mg/min over the run")
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--discard", type=float, default=0.0, help="transient minutes to drop")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("subsample", help="apply a measurement function to a dense series")
    p.add_argument("--in", dest="dense", required=True, help="dense observations CSV")
    p.add_argument("--spec", choices=["h1", "h2", "h3"])
    p.add_argument("--seed", type=int)
    p.add_argument("--period", type=float)
    p.add_argument("--gap-min", type=float)
    p.add_argument("--gap-max", type=float)
    p.add_argument("--times", help="comma-separated explicit times for h1")
    p.add_argument("--times-file", help="file of explicit times for h1, one per line")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_subsample)

    p = sub.add_parser("estimate", help="run the staged estimation")
    p.add_argument("--obs")
    p.add_argument("--kicks")
    p.add_argument("--config")
    p.add_argument("--out-dir")
    p.add_argument("--t-s", type=float)
    p.add_argument("--t-l", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--omega-tilde", type=float)
    p.add_argument("--iters-stage1a", type=int)
    p.add_argument("--iters-stage1b", type=int)
    p.add_argument("--iters-stage2", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--dashed-threshold", type=float)
    p.add_argument("--basic-state", choices=["oscillatory", "non-oscillatory"])
    p.add_argument("--recon-step", type=float, default=1.0)
    p.add_argument("--density-time", type=float)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("densities", help="kernel density grids at requested times")
    p.add_argument("--obs", required=True)
    p.add_argument("--states", help="states CSV from estimate (x column used)")
    p.add_argument("--at-times", help="comma-separated times; default window midpoint")
    p.add_argument("--t-s", type=float)
    p.add_argument("--t-l", type=float)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_densities)

    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(func=lambda args: (print(f"mcsmooth {__version__}"), 0)[1])

    return parser


def run_command(argv) -> int:
    """Run one CLI command; returns the process exit code (2 = usage error)."""
    parser = _build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
