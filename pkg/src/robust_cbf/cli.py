"""Command-line front end.

Subcommands::

    robust-cbf run      --config CFG [--out DIR] [--set sec.key=value ...]
    robust-cbf compare  --config CFG --filters a,b,c [--out DIR]
    robust-cbf bounds   --lambda 5,5,5,5 --h 1,1,1,1 --delta-b 0.9 --delta-l 1
    robust-cbf list

Exit codes: 0 safe completion, 1 configuration error (including a failed
estimator-speed gate), 2 safety violation, 3 filter program aborted the run.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .barrier import GateViolation, gate_margin
from .config import (ConfigError, bundled_scenarios, estimator_from_parser, load_scenario, read_config,
                     resolve_config)
from .estimator import EstimatorConfig, error_bound, iss_gains
from .filters import FILTERS, normalize_filter
from .matrix_core import solve_lyapunov
from .sim import FilterFailure, SimulationError, compute_metrics, export_csv, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_UNSAFE, EXIT_ABORT = 0, 1, 2, 3
OUT_ENV = "ROBUST_CBF_OUT"


def _out_dir(arg) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or "robust_cbf_out")


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _run_one(cfg, out: Path, args):
    """Run and write trace/metrics. Returns (exit code, metrics or None)."""
    out.mkdir(parents=True, exist_ok=True)
    try:
        trace, metrics = run_scenario(cfg)
        code = EXIT_OK if metrics.safe else EXIT_UNSAFE
    except FilterFailure as exc:
        trace, metrics = exc.trace, compute_metrics(exc.trace, cfg.plant)
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_ABORT
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT, None
    export_csv(trace, out / "trace.csv")
    (out / "metrics.txt").write_text(metrics.format(), encoding="utf-8")
    return code, metrics


def cmd_run(args) -> int:
    cfg = load_scenario(resolve_config(args.config), args.set)
    out = _out_dir(args.out)
    code, metrics = _run_one(cfg, out, args)
    if metrics is not None:
        _say(args, metrics.format().rstrip())
        if not metrics.safe:
            print(f"safety violation: first_violation_time = {metrics.first_violation_time:.6g}",
                  file=sys.stderr)
    _say(args, f"wrote {out / 'trace.csv'} and {out / 'metrics.txt'}")
    return code


def _table(rows) -> str:
    head = ("filter", "min_h", "first_violation_time", "infeasible_steps", "tracking_cost", "status")
    body = []
    for name, code, m in rows:
        if m is None:
            body.append((name, "-", "-", "-", "-", "aborted"))
            continue
        fvt = "none" if m.first_violation_time is None else f"{m.first_violation_time:.6g}"
        status = {EXIT_OK: "safe", EXIT_UNSAFE: "unsafe", EXIT_ABORT: "aborted"}[code]
        body.append((name, f"{m.min_h:.6g}", fvt, str(m.infeasible_steps), f"{m.tracking_cost:.6g}", status))
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    fmt = "  ".join("{:<%d}" % w for w in widths)
    return "\n".join(fmt.format(*r) for r in [head] + body) + "\n"


def cmd_compare(args) -> int:
    names = [s for s in (args.filters or "").split(",") if s.strip()]
    if not names:
        raise ConfigError("--filters needs at least one filter")
    try:
        names = [normalize_filter(s) for s in names]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    path = resolve_config(args.config)
    # validate every filter against the plant before running any of them
    cfgs = [load_scenario(path, args.set, filter_name=name) for name in names]
    out = _out_dir(args.out)
    rows = []
    for name, cfg in zip(names, cfgs):
        code, m = _run_one(cfg, out / name, args)
        rows.append((name, code, m))
    table = _table(rows)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.txt").write_text(table, encoding="utf-8")
    _say(args, table.rstrip())
    return EXIT_ABORT if any(code == EXIT_ABORT for _, code, _ in rows) else EXIT_OK


def _square(text: str) -> np.ndarray:
    """``a,b,c`` is a diagonal; ``a,b;c,d`` a full matrix."""
    try:
        if ";" in text:
            M = np.array([[float(v) for v in r.split(",")] for r in text.split(";") if r.strip()], float)
        else:
            M = np.diag([float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise ConfigError(f"cannot parse matrix {text!r}") from exc
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.size == 0:
        raise ConfigError(f"matrix must be square, got {text!r}")
    return M


def _bounds_config(args):
    if args.config:
        cp = read_config(resolve_config(args.config), overrides=args.set)
        lam_txt = cp.get("estimator", "lambda_diag", fallback=None) or cp.get("estimator", "lambda", fallback="")
        n = _square(lam_txt.replace(" ", "")).shape[0] if lam_txt else 0
        ecfg = estimator_from_parser(cp, n)
        alpha_h = cp.getfloat("barrier", "alpha_h", fallback=args.alpha_h)
        sigma_v = cp.getfloat("barrier", "sigma_v", fallback=args.sigma_v)
        return ecfg, alpha_h, sigma_v
    if args.lam is None:
        raise ConfigError("bounds needs --lambda (or --config)")
    lam = _square(args.lam)
    H = _square(args.h) if args.h else np.eye(lam.shape[0])
    try:
        ecfg = EstimatorConfig(lam, H, args.delta_b, args.delta_l)
    except ValueError as exc:
        raise ConfigError(f"invalid estimator: {exc}") from exc
    return ecfg, args.alpha_h, args.sigma_v


def cmd_bounds(args) -> int:
    ecfg, alpha_h, sigma_v = _bounds_config(args)
    env = ecfg.envelope
    mu_e, gamma_val = iss_gains(ecfg.lam, ecfg.delta_l)
    lam_min = ecfg.lam.min_eigenvalue
    gate = gate_margin(sigma_v, mu_e, alpha_h)
    P = solve_lyapunov(ecfg.lam, ecfg.H) + 0.0  # no negative zeros in the printout
    with np.printoptions(precision=17):
        print("P =")
        print(P)
    for key, val in (("D", env.D), ("tau_e", env.tau_e), ("P_norm", env.P_norm), ("mu_e", mu_e),
                     ("gamma", gamma_val), ("e_bar_0", error_bound(env, 0.0)), ("e_bar_inf", env.steady_state),
                     ("lambda_min", lam_min), ("alpha_h", alpha_h), ("sigma_v", sigma_v), ("gate_E", gate)):
        print(f"{key} = {val:.17g}")
    print(f"gate = {'pass' if lam_min > alpha_h else 'fail'} (lambda_min > alpha_h)")
    return EXIT_OK


def cmd_list(args) -> int:
    print("bundled scenarios:")
    for name in bundled_scenarios():
        print(f"  {name}")
    print("filters: " + ", ".join(FILTERS))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file or bundled scenario name")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./robust_cbf_out)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")

    ap = argparse.ArgumentParser(prog="robust-cbf", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate one scenario")
    cp = sub.add_parser("compare", parents=[common], help="run one scenario under several filters")
    cp.add_argument("--filters", help="comma-separated filter names")
    bp = sub.add_parser("bounds", parents=[common], help="print estimator certificate constants")
    bp.add_argument("--lambda", dest="lam", help="estimator gain: diagonal a,b,c or rows a,b;c,d")
    bp.add_argument("--h", help="Lyapunov weight (default identity)")
    bp.add_argument("--delta-b", type=float, default=0.0)
    bp.add_argument("--delta-l", type=float, default=0.0)
    bp.add_argument("--alpha-h", type=float, default=1.0)
    bp.add_argument("--sigma-v", type=float, default=1.0)
    sub.add_parser("list", parents=[common], help="list bundled scenarios and filters")
    return ap


_COMMANDS = {"run": cmd_run, "compare": cmd_compare, "bounds": cmd_bounds, "list": cmd_list}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("run", "compare") and not args.config:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, GateViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
