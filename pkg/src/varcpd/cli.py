"""Command-line interface: ``varcpd <subcommand> [options]``.

Exit codes: 0 on success, 1 for configuration errors (bad flags, invalid
settings, unreadable inputs) and 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationConfig, boundary_length, calibrate_null, detect
from .detection import (
    CandidateGrid,
    ThresholdInputs,
    c_star,
    custom_grid,
    dyadic_grid,
    full_grid,
    run_theoretical_test,
    sigma_bounds,
    single_point,
    window_grid,
)
from .estimator import SolverConfig, estimate, segment_problem
from .exceptions import ConfigError, ConfigInvalid, NumericalError
from .harness import (
    GridChoice,
    ScenarioConfig,
    base_transition,
    emit_power_csv,
    load_config,
    preset_by_name,
    preset_figures,
    run_preset,
    run_scenario,
)
from .io import (
    read_trajectory,
    write_decision_report,
    write_evaluations,
    write_iterations,
    write_matrix,
    write_quantile_table,
    write_trajectory,
)
from .var_model import ChangeSpec, NoiseModel, make_change_pair, simulate

log = logging.getLogger("varcpd")

PRESETS = ("fig1", "fig2", "fig3", "fig4", "fig5")


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors map to the configuration exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value file with [scenario], [solver], [calibration]")
    common.add_argument("--seed", type=_seed, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker processes")
    common.add_argument("--preset", choices=PRESETS, help="desk-scale figure preset")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def _scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--p", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--R", type=int)
    p.add_argument("--gamma1", type=float)
    p.add_argument("--gamma2", type=float)
    p.add_argument("--tau", type=int)


def _calibration_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float)
    p.add_argument("--h", type=float, help="boundary fraction (default 5p/T)")
    p.add_argument("--delta", type=float)
    p.add_argument("--quantile-samples", "-S", dest="S", type=_positive_int)


def _grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", choices=[g.value for g in GridChoice] + ["custom"], default="window")
    p.add_argument("--points", type=int, nargs="+", help="candidate points for --grid custom")
    p.add_argument("--gamma1", type=float, help="operator norm of the head model (estimated if omitted)")
    p.add_argument("--gamma2", type=float, help="operator norm of the tail model (estimated if omitted)")
    p.add_argument("--tau", type=int, help="candidate for --grid single (default T/2)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="varcpd", description="Low-rank VAR(1) change-point detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()

    p = sub.add_parser("simulate", parents=[common], help="emit a trajectory CSV")
    _scenario_flags(p)
    p.add_argument("--jump", type=float, help="Frobenius jump size (0 for no change)")
    p.add_argument("--noiseless", action="store_true")

    p = sub.add_parser("estimate", parents=[common], help="fit one segment")
    p.add_argument("--input", type=Path, required=True, help="trajectory CSV")
    p.add_argument("--t1", type=int, required=True)
    p.add_argument("--t2", type=int, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--lam", type=float, help="penalty level")
    g.add_argument("--c", type=float, help="penalty constant, lambda = c sqrt(p/n)")
    p.add_argument("--dump-iterations", action="store_true", help="write iterations.csv")

    p = sub.add_parser("test", parents=[common], help="run a change-point test on a trajectory")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--method", choices=("calibrated", "theoretical"), default="calibrated",
                   help="simulated quantiles (default) or the closed-form threshold")
    p.add_argument("--R", type=int, help="rank bound (theoretical method)")
    p.add_argument("--gamma", type=float, help="operator-norm bound (theoretical method)")
    p.add_argument("--C", type=float, default=1.0, help="threshold constant (theoretical method)")
    _grid_flags(p)
    _calibration_flags(p)

    p = sub.add_parser("quantile", parents=[common], help="build the null quantile tables")
    p.add_argument("--input", type=Path, required=True)
    _grid_flags(p)
    _calibration_flags(p)

    p = sub.add_parser("power", parents=[common], help="run a scenario or a preset")
    _scenario_flags(p)
    p.add_argument("--jumps", type=float, nargs="+", help="Frobenius jump grid")
    p.add_argument("--grid", choices=[g.value for g in GridChoice])
    p.add_argument("--replicates", "-N", type=_positive_int)
    _calibration_flags(p)

    p = sub.add_parser("figures", parents=[common], help="run all five presets")
    p.add_argument("--replicates", "-N", type=_positive_int, help="override replicates per jump")
    p.add_argument("--quantile-samples", "-S", dest="S", type=_positive_int, help="override S")
    return parser


def _load(args) -> tuple[ScenarioConfig, SolverConfig]:
    if args.config is not None:
        return load_config(args.config)
    return ScenarioConfig(), SolverConfig()


def _override(cfg: ScenarioConfig, args, names) -> ScenarioConfig:
    changes = {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}
    if getattr(args, "seed", None) is not None:
        changes["master_seed"] = args.seed
    return replace(cfg, **changes)


def _calibration(args, cfg: ScenarioConfig) -> CalibrationConfig:
    cfg = _override(cfg, args, ("alpha", "h", "delta", "S"))
    return cfg.calibration_config()


def _grid(args, T: int, p: int, calib: CalibrationConfig) -> CandidateGrid:
    th = boundary_length(T, calib.resolve_h(T, p))
    if args.grid == "single":
        return single_point(T // 2 if args.tau is None else args.tau, T)
    if args.grid == "custom":
        if not args.points:
            raise ConfigInvalid("--grid custom requires --points")
        return custom_grid(args.points, T)
    if getattr(args, "method", "calibrated") == "theoretical":
        # the closed-form test may search all of 1..T-1
        if args.grid == "dyadic":
            return dyadic_grid(T)
        if args.grid == "full":
            return full_grid(T)
    if args.grid == "dyadic":
        return dyadic_grid(T).restrict(th, T - th)
    return window_grid(T, th)


def _write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _metadata(args, started: float, **extra) -> dict:
    return {
        "command": args.command,
        "argv": sys.argv[1:],
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started_unix": started,
        "elapsed_seconds": time.time() - started,
        **extra,
    }


def cmd_simulate(args) -> None:
    cfg, _ = _load(args)
    cfg = _override(cfg, args, ("p", "T", "R", "gamma1", "gamma2", "tau"))
    jump = args.jump if args.jump is not None else max(cfg.jump_fro_grid)
    base = base_transition(cfg)
    theta1, theta2 = make_change_pair(base, jump, gamma_after=cfg.gamma2)
    spec = ChangeSpec(theta1, theta2, cfg.change_point) if jump > 0 else ChangeSpec.null(theta1)
    rng = np.random.default_rng(cfg.master_seed)
    traj = simulate(spec, NoiseModel.identity(cfg.p), cfg.T, rng, noiseless=args.noiseless)
    write_trajectory(traj, args.out / "trajectory.csv")
    write_matrix(theta1.entries, args.out / "theta1.csv")
    write_matrix(theta2.entries, args.out / "theta2.csv")
    print(f"wrote {args.out / 'trajectory.csv'} (T={cfg.T}, p={cfg.p}, jump={jump:g}, "
          f"tau={cfg.change_point if jump > 0 else 'none'})")


def cmd_estimate(args) -> None:
    _, solver = _load(args)
    traj = read_trajectory(args.input)
    if not 0 <= args.t1 < args.t2 <= traj.T:
        raise ConfigInvalid(f"need 0 <= t1 < t2 <= T={traj.T}")
    n = args.t2 - args.t1
    if args.lam is not None:
        lam = args.lam
    else:
        lam = (1.0 if args.c is None else args.c) * np.sqrt(traj.p / n)
    solver = replace(solver, record_history=args.dump_iterations)
    result = estimate(segment_problem(traj, args.t1, args.t2, lam), solver)
    write_matrix(result.theta_hat, args.out / "theta_hat.csv")
    summary = {
        "t1": args.t1, "t2": args.t2, "n": n, "p": traj.p, "lambda": lam,
        "objective": result.objective_value, "iterations": result.iterations_used,
        "kkt_residual": result.kkt_residual, "converged": result.converged,
        "rank_deficient": result.rank_deficient,
        "rank": int(np.linalg.matrix_rank(result.theta_hat)) if np.any(result.theta_hat) else 0,
    }
    _write_json(args.out / "estimate.json", summary)
    if args.dump_iterations and result.history is not None:
        write_iterations(result.history, result.kkt_history, args.out / "iterations.csv")
    print(json.dumps(summary, sort_keys=True))


def _theoretical_test(args, cfg, solver, traj, calib, started) -> None:
    if args.R is None or args.gamma is None:
        raise ConfigInvalid("--method theoretical requires --R and --gamma")
    grid = _grid(args, traj.T, traj.p, calib)
    noise = NoiseModel.identity(traj.p)
    sigma_op, kappa = sigma_bounds(noise, args.gamma)
    inputs = ThresholdInputs(
        alpha=calib.alpha, R=args.R, p=traj.p, T=traj.T, gamma=args.gamma, grid_size=len(grid),
        sigma_z_op=noise.op_norm, sigma_op=sigma_op, kappa_sigma=kappa,
        c_star=c_star(args.C, noise.op_norm, sigma_op, kappa, args.gamma),
    )
    reject, evals = run_theoretical_test(traj, grid, inputs, solver)
    write_evaluations(evals, args.out / "evaluations.csv")
    _write_json(args.out / "test.meta.json", _metadata(
        args, started, reject=reject, candidates=list(grid.points)))
    print(f"{'reject' if reject else 'accept'} H0 ({len(grid)} candidates, "
          f"max ratio {max(e.ratio for e in evals):.4g})")


def cmd_test(args) -> None:
    started = time.time()
    cfg, solver = _load(args)
    traj = read_trajectory(args.input)
    calib = _calibration(args, cfg)
    if args.method == "theoretical":
        return _theoretical_test(args, cfg, solver, traj, calib, started)
    grid = _grid(args, traj.T, traj.p, calib)
    seed = cfg.master_seed if args.seed is None else args.seed
    result = detect(traj, args.gamma1, args.gamma2, grid, calib, solver, np.random.default_rng(seed))
    write_decision_report(result, args.out / "decision.csv")
    write_quantile_table([result.quantiles_first, result.quantiles_last], args.out / "quantiles.csv")
    write_matrix(result.theta_first.entries, args.out / "theta_first.csv")
    write_matrix(result.theta_last.entries, args.out / "theta_last.csv")
    _write_json(args.out / "test.meta.json", _metadata(
        args, started, reject=result.psi, c1=result.constants.c1, c2=result.constants.c2,
        candidates=list(grid.points),
    ))
    print(f"{'reject' if result.psi else 'accept'} H0 (c1={result.constants.c1:.4g}, "
          f"c2={result.constants.c2:.4g}, {len(grid)} candidates)")


def cmd_quantile(args) -> None:
    started = time.time()
    cfg, solver = _load(args)
    traj = read_trajectory(args.input)
    calib = _calibration(args, cfg)
    grid = _grid(args, traj.T, traj.p, calib)
    seed = cfg.master_seed if args.seed is None else args.seed
    null = calibrate_null(traj, args.gamma1, args.gamma2, grid, calib, solver, np.random.default_rng(seed))
    write_quantile_table([null.quantiles_first, null.quantiles_last], args.out / "quantiles.csv")
    _write_json(args.out / "quantile.meta.json", _metadata(
        args, started, c1=null.constants.c1, c2=null.constants.c2,
    ))
    print(f"wrote {args.out / 'quantiles.csv'} ({len(grid)} candidates, S={calib.quantile_samples})")


def cmd_power(args) -> None:
    started = time.time()
    if args.preset is not None:
        seed = 0 if args.seed is None else args.seed
        preset = preset_by_name(args.preset, seed).with_overrides(
            replicates=args.replicates, S=args.S, alpha=args.alpha, delta=args.delta,
        )
        _, solver = _load(args)
        rows = run_preset(preset, solver, args.threads)
        name = preset.name
    else:
        cfg, solver = _load(args)
        cfg = _override(cfg, args, ("p", "T", "R", "gamma1", "gamma2", "tau", "replicates",
                                    "alpha", "h", "delta", "S"))
        if args.jumps is not None:
            cfg = replace(cfg, jump_fro_grid=tuple(args.jumps))
        if args.grid is not None:
            cfg = replace(cfg, grid_kind=args.grid)
        rows = run_scenario(cfg, solver, args.threads)
        name = cfg.name
    path = emit_power_csv(rows, args.out / f"{name}.csv")
    _write_json(args.out / f"{name}.meta.json", _metadata(args, started))
    for r in rows:
        print(f"{r.scenario} {r.varied_param}={r.param_value} jump={r.jump_fro:g} "
              f"power={r.power:.3f} [{r.wilson_lo:.3f}, {r.wilson_hi:.3f}]")
    print(f"wrote {path}")


def cmd_figures(args) -> None:
    _, solver = _load(args)
    seed = 0 if args.seed is None else args.seed
    timings = {}
    for preset in preset_figures(seed):
        if args.preset is not None and preset.name != args.preset:
            continue
        started = time.time()
        preset = preset.with_overrides(replicates=args.replicates, S=args.S)
        rows = run_preset(preset, solver, args.threads)
        emit_power_csv(rows, args.out / f"{preset.name}.csv")
        timings[preset.name] = time.time() - started
        log.info("%s done in %.1f s", preset.name, timings[preset.name])
        print(f"wrote {args.out / (preset.name + '.csv')} ({timings[preset.name]:.1f} s)")
    _write_json(args.out / "figures.meta.json", {
        "seed": seed, "replicates_override": args.replicates, "S_override": args.S,
        "timings_seconds": timings, "version": __version__,
        "solver": {k: (v.value if hasattr(v, "value") else v) for k, v in asdict(solver).items()},
    })


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "test": cmd_test,
    "quantile": cmd_quantile,
    "power": cmd_power,
    "figures": cmd_figures,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"varcpd: configuration error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"varcpd: configuration error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"varcpd: numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
