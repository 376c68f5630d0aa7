"""
Command-line surface

Subcommands: calibrate, solve, sweep-l, simulate, verify. Each reads the
run configuration (JSON file plus flags) and writes its results into the
output directory.

Exit codes: 0 success, 1 input error, 2 solver failure, 3 verification failure.
"""
import argparse
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from config.run_config import RunConfig, load_run_config
from config.settings import get_settings
from models.ou_process import fit_mle, load_pair_csv, load_price_csv, pick_beta_star, scan_beta_grid
from solvers.double_stopping import default_grid, l_star, solve_no_stoploss, value_grid
from solvers.stoploss import (
    RelativeStopLossSpec,
    solve_relative_stoploss,
    solve_stoploss,
    sweep_L,
    sweep_L_multi,
    value_grid_L,
)
from tools.errors import InputError, OUTimingError
from tools.io import write_json, write_table
from verification.checks import run_verification
from verification.mc_oracle import PolicySpec, estimate_policy_value, sample_policy_paths

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def parse_floats(text: str) -> List[float]:
    """Comma-separated floats; an empty string is an empty list"""
    text = text.strip()
    if not text:
        return []
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {e}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="Monte Carlo seed")
    common.add_argument("--stop-loss", type=float, dest="stop_loss", help="absolute stop-loss level L")
    common.add_argument("--ell", type=float, help="relative stop-loss offset below the entry price")
    common.add_argument("--workers", type=int, help="process pool size for grid sweeps and Monte Carlo blocks")
    common.add_argument("--log-level", dest="log_level", type=str.upper, choices=LOG_LEVELS, help="logging verbosity")

    parser = argparse.ArgumentParser(
        prog="ou-timing",
        description="Optimal mean-reversion trading thresholds for OU spreads",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    calibrate = sub.add_parser("calibrate", parents=[common], help="fit OU parameters from a price CSV")
    calibrate.add_argument("csv", help="pair CSV with columns date,price1,price2")
    calibrate.add_argument("--series", action="store_true", help="treat the CSV as one series with columns date,price")
    calibrate.add_argument("--b-grid", type=parse_floats, dest="b_grid", help="candidate short cash amounts")
    calibrate.add_argument("--dt", type=float, help="observation step in years")

    sub.add_parser("solve", parents=[common], help="solve entry and exit thresholds")

    sweep = sub.add_parser("sweep-l", parents=[common], help="exit threshold against the stop-loss level")
    sweep.add_argument("--l-grid", type=parse_floats, dest="l_grid", help="stop-loss levels")
    sweep.add_argument("--thetas", type=parse_floats, help="long-run means; one curve each")

    simulate = sub.add_parser("simulate", parents=[common], help="simulate paths under the optimal policy")
    simulate.add_argument("--x0", type=float, help="starting spread value")
    simulate.add_argument("--n-paths", type=int, dest="n_paths", help="paths for the value estimate")
    simulate.add_argument("--sample-paths", type=int, dest="sample_paths", help="paths written to paths.csv")

    verify = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    verify.add_argument("--no-mc", action="store_true", help="skip Monte Carlo checks")
    verify.add_argument("--n-paths", type=int, dest="n_paths", help="paths per Monte Carlo estimate")
    verify.add_argument(
        "--perturb-b",
        type=float,
        default=0.0,
        dest="perturb_b",
        help="relative perturbation applied to b* before checking",
    )
    return parser


def overrides_from(args: argparse.Namespace) -> Dict[str, Any]:
    mc = {"seed": args.seed, "n_paths": getattr(args, "n_paths", None), "workers": args.workers}
    return {
        "output_dir": args.out,
        "stop_loss": args.stop_loss,
        "relative_ell": args.ell,
        "mc": {k: v for k, v in mc.items() if v is not None} or None,
        "l_grid": getattr(args, "l_grid", None),
        "sweep_thetas": getattr(args, "thetas", None),
        "b_grid": getattr(args, "b_grid", None),
        "x0": getattr(args, "x0", None),
        "sample_paths": getattr(args, "sample_paths", None),
    }


def workers_from(args: argparse.Namespace) -> int:
    return args.workers if args.workers is not None else get_settings().workers


# commands


def cmd_calibrate(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = cfg.output_path
    if args.series:
        fit = fit_mle(load_price_csv(args.csv, args.dt))
        write_json(out / "calibration.json", {"calibration": fit.to_report(), "source": args.csv})
        return EXIT_OK

    pair = load_pair_csv(args.csv, A=cfg.cash_A, B_grid=cfg.b_grid, dt=args.dt)
    curve = scan_beta_grid(pair)
    write_table(
        out / "likelihood_curve.csv",
        ["B", "avg_loglik", "theta", "mu", "sigma"],
        [
            [B, fit.avg_loglik, fit.params.theta, fit.params.mu, fit.params.sigma]
            if fit is not None
            else [B, np.nan, np.nan, np.nan, np.nan]
            for B, fit in curve
        ],
    )
    best = pick_beta_star(curve)
    write_json(out / "calibration.json", {"calibration": best.to_report(), "source": args.csv, "A": pair.A})
    return EXIT_OK


def cmd_solve(cfg: RunConfig, args: argparse.Namespace) -> int:
    p, d, q = cfg.model, cfg.discount, cfg.quadrature
    out = cfg.output_path
    sol = solve_no_stoploss(p, d, q)
    xs = default_grid(p, cfg.value_grid_points)
    columns = {"x": xs}
    values = value_grid(xs, sol, p, d, q)
    columns["V"], columns["J"] = values["V"], values["J"]
    document: Dict[str, Any] = {"config": cfg.echo(), "no_stoploss": sol.to_report()}

    if cfg.stop_loss is not None:
        stop = solve_stoploss(cfg.stop_loss, p, d, q)
        document["stoploss"] = stop.to_report()
        with_stop = value_grid_L(xs, stop, p, d, q)
        columns["V_L"], columns["J_L"] = with_stop["V_L"], with_stop["J_L"]

    if cfg.relative_ell is not None:
        spec = RelativeStopLossSpec.around(p, cfg.relative_ell, cfg.relative_grid_points)
        relative = solve_relative_stoploss(spec, p, d, q, workers_from(args))
        document["relative_stoploss"] = relative.to_report()
        write_table(
            out / "relative_stoploss.csv",
            ["x", "V_rel", "reward", "J_rel"],
            zip(relative.x, relative.V_rel, relative.reward, relative.J_rel),
        )

    names = list(columns)
    write_table(out / "values.csv", names, zip(*(columns[n] for n in names)))
    write_json(out / "thresholds.json", document)
    return EXIT_OK


def cmd_sweep_l(cfg: RunConfig, args: argparse.Namespace) -> int:
    p, d, q = cfg.model, cfg.discount, cfg.quadrature
    workers = workers_from(args)
    out = cfg.output_path / "sweep_l.csv"
    grid = cfg.l_grid

    if cfg.sweep_thetas:
        if grid is None:
            offsets = list(np.linspace(3.0 * p.stationary_sd, 0.0, 20))
        else:
            # an explicit grid is read relative to the configured model's L*
            offsets = [l_star(p, d) - L for L in grid]
        curves = sweep_L_multi(cfg.sweep_thetas, offsets, p, d, q, workers)
        rows = [[theta, L, b] for theta, curve in curves.items() for L, b in curve]
    else:
        if grid is None:
            critical = l_star(p, d)
            grid = list(np.linspace(critical - 3.0 * p.stationary_sd, critical, 20))
        rows = [[p.theta, L, b] for L, b in sweep_L(grid, p, d, q, workers)]

    failed = sum(1 for row in rows if np.isnan(row[2]))
    if failed:
        logger.warning(f"{failed} sweep points failed and are written as NaN")
    write_table(out, ["theta", "L", "b_L"], rows)
    return EXIT_OK


def default_policy(cfg: RunConfig) -> PolicySpec:
    """Optimal policy of the configured problem"""
    p, d, q = cfg.model, cfg.discount, cfg.quadrature
    if cfg.stop_loss is not None:
        stop = solve_stoploss(cfg.stop_loss, p, d, q)
        if stop.degenerate_exit:
            return PolicySpec(exit_upper=stop.L, stop_loss=stop.L)
        if stop.trivial_entry:
            return PolicySpec(exit_upper=stop.b_L, stop_loss=stop.L)
        return PolicySpec(entry_lower=stop.a_L, entry_upper=stop.d_L, exit_upper=stop.b_L, stop_loss=stop.L)
    sol = solve_no_stoploss(p, d, q)
    return PolicySpec(entry_upper=sol.d_star, exit_upper=sol.b_star)


def cmd_simulate(cfg: RunConfig, args: argparse.Namespace) -> int:
    p, d = cfg.model, cfg.discount
    out = cfg.output_path
    policy = cfg.policy or default_policy(cfg)
    x0 = cfg.x0 if cfg.x0 is not None else p.theta
    if cfg.sample_paths > 0:
        rows = sample_policy_paths(x0, policy, p, cfg.mc, n_paths=cfg.sample_paths)
        write_table(out / "paths.csv", ["path", "t", "x", "event"], ([r["path"], r["t"], r["x"], r["event"]] for r in rows))
    report = estimate_policy_value(x0, policy, d, p, cfg.mc)
    write_json(out / "mc_report.json", {"config": cfg.echo(), "x0": x0, "policy": policy.model_dump(), **report.model_dump()})
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args: argparse.Namespace) -> int:
    report = run_verification(cfg, b_star_perturbation=args.perturb_b, monte_carlo=not args.no_mc)
    write_json(cfg.output_path / "verify_report.json", {"config": cfg.echo(), **report.to_report()})
    for check in report.checks:
        mark = {"pass": "✅", "fail": "❌", "skipped": "⏭️"}[check.status]
        logger.info(f"{mark} {check.name} {check.detail}")
    return EXIT_OK if report.passed else EXIT_VERIFY


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "calibrate": cmd_calibrate,
    "solve": cmd_solve,
    "sweep-l": cmd_sweep_l,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def _diagnose(out_dir: Path, command: str, error: Exception) -> None:
    payload = {"command": command, "error": type(error).__name__, "message": str(error)}
    for attr in ("bracket", "residual", "diagnostics", "line"):
        if getattr(error, attr, None) is not None:
            payload[attr] = getattr(error, attr)
    try:
        write_json(out_dir / "error.json", payload)
    except OSError as e:
        logger.error(f"could not write diagnostics: {e}")


def run(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; that code is reserved for solver failures
        return EXIT_OK if e.code in (0, None) else EXIT_INPUT
    if args.log_level:
        logging.getLogger().setLevel(args.log_level)
    try:
        cfg = load_run_config(args.config, overrides_from(args))
    except InputError as e:
        logger.error(f"❌ {e}")
        return EXIT_INPUT

    logger.info(f"running {args.command} -> {cfg.output_dir}")
    try:
        return COMMANDS[args.command](cfg, args)
    except (InputError, ValidationError) as e:
        logger.error(f"❌ input error: {e}")
        _diagnose(cfg.output_path, args.command, e)
        return EXIT_INPUT
    except OUTimingError as e:
        logger.error(f"❌ {args.command} failed: {e}", exc_info=True)
        _diagnose(cfg.output_path, args.command, e)
        return EXIT_SOLVER
    except (ValueError, ArithmeticError) as e:
        # numerical breakdown outside the solver checks, e.g. math domain errors
        logger.error(f"❌ {args.command} failed with {type(e).__name__}: {e}", exc_info=True)
        _diagnose(cfg.output_path, args.command, e)
        return EXIT_SOLVER
