"""``divctl`` command line: solve, simulate, verify and tabulate to CSV.

Exit status is 0 on success, 1 for invalid configuration or parameters and
2 for numerical failures (non-convergence, inconsistent model, or a
verification suite that did not come out as expected).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import gbm, ou, pide, verify
from .config import ConfigError, RunConfig, parse_config
from .params import GbmDiscount, ParameterError, VasicekDiscount
from .surplus import ThresholdPolicy, estimate_value

__all__ = ["main", "build_parser", "fmt"]


def fmt(v) -> str:
    """17 significant digits for floats, so values round-trip exactly."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    return path


class _Usage(ValueError):
    """Command-line misuse; reported with exit status 1."""


def _need_model(cfg: RunConfig, kind, command: str):
    if not isinstance(cfg.discount, kind):
        name = "gbm" if kind is GbmDiscount else "vasicek"
        raise _Usage(f"{command} needs a {name} discount section")
    return cfg.discount


def _domain(cfg: RunConfig, args) -> pide.Domain:
    base = pide.Domain()
    return pide.Domain(
        x_max=cfg.number("grid.x_max", base.x_max),
        n_x=args.nx if args.nx is not None else cfg.integer("grid.n_x", base.n_x),
        n_r=args.nr if args.nr is not None else cfg.integer("grid.n_r", base.n_r),
        r_halfwidth_in_stationary_sds=cfg.number("grid.r_halfwidth", base.r_halfwidth_in_stationary_sds),
        min_halfwidth=cfg.number("grid.min_halfwidth", base.min_halfwidth),
    )


def _tol(cfg, args) -> float:
    return args.tol if args.tol is not None else cfg.number("grid.tol", 1e-8)


def _max_iter(cfg, args) -> int:
    return args.max_iter if args.max_iter is not None else cfg.integer("grid.max_iter", 2_000_000)


def _seed(cfg, args) -> int:
    return args.seed if args.seed is not None else cfg.seed


def cmd_solve_gbm(cfg: RunConfig, args, out: Path) -> int:
    gd = _need_model(cfg, GbmDiscount, "solve-gbm")
    sol = gbm.build_solution(cfg.risk, gd)
    default_xmax = 3.0 * sol.b_star if sol.case is gbm.Case.B else 10.0 / sol.beta
    x = np.linspace(0.0, cfg.number("curve.x_max", default_xmax), cfg.integer("curve.n", 201))
    V = gbm.eval_value(sol, gd.r0, x)
    Fp = gbm.eval_F_prime(sol, x)
    pol = gbm.optimal_rate(sol, x)
    _write_csv(out / "value_curve.csv", ["x", "V", "F_prime", "policy"], zip(x, V, Fp, pol))
    rt = sol.roots
    summary = [("case", sol.case.value), ("kappa", sol.kappa), ("b_star", sol.b_star), ("R1", rt.R1),
               ("R2", rt.R2), ("S1", rt.S1), ("S2", rt.S2), ("gamma", sol.gamma if sol.gamma is not None else
                                                            math.nan), ("D", sol.D), ("rho", sol.rho)]
    _write_csv(out / "solution.csv", ["quantity", "value"], summary)
    print(" ".join(f"{k}={v if isinstance(v, str) else fmt(v)}" for k, v in summary))
    return 0


def cmd_mc(cfg: RunConfig, args, out: Path) -> int:
    disc = cfg.discount
    n_paths = args.paths if args.paths is not None else cfg.integer("mc.n_paths", 100_000)
    dt = args.dt if args.dt is not None else cfg.number("mc.dt", 0.01)
    seed = _seed(cfg, args)
    horizon = cfg.number("mc.horizon", 2000.0) if isinstance(disc, GbmDiscount) else cfg.number("mc.horizon", 0.0)
    horizon = horizon if horizon > 0 else None
    if isinstance(disc, GbmDiscount):
        sol = gbm.build_solution(cfg.risk, disc)
        thr = cfg.number("mc.threshold", sol.b_star)
        x0s = cfg.numbers("mc.x0", [sol.b_star])
    else:
        thr = cfg.number("mc.threshold")
        x0s = cfg.numbers("mc.x0")
    policy = ThresholdPolicy.constant(thr)
    rows = []
    for k, x0 in enumerate(x0s):
        est = estimate_value(cfg.risk, disc, policy, x0, n_paths, horizon, dt, seed + k,
                             cfg.number("mc.tail_tol", 1e-6))
        rows.append((disc.r0, x0, est.mean, est.stderr, est.n_paths, est.seed))
        print(f"r0={fmt(disc.r0)} x0={fmt(x0)} mean={fmt(est.mean)} stderr={fmt(est.stderr)}")
    _write_csv(out / "estimates.csv", ["r0", "x0", "mean", "stderr", "n_paths", "seed"], rows)
    return 0


def _write_field(out: Path, fld: pide.ValueField) -> None:
    g = fld.grid
    rows = ((g.r_nodes[i], g.x_nodes[j], fld.V[i, j], fld.policy[i, j])
            for i in range(g.n_r) for j in range(g.n_x))
    _write_csv(out / "value_field.csv", ["r", "x", "V", "policy"], rows)
    curve = pide.extract_threshold_curve(fld)
    _write_csv(out / "threshold_curve.csv", ["r", "b_star", "resolved"],
               zip(curve.r, curve.b_star, curve.resolved))
    _write_csv(out / "convergence.csv", ["iteration", "residual_norm"],
               zip(fld.history_iterations, fld.history))


def cmd_solve_vasicek(cfg: RunConfig, args, out: Path) -> int:
    vd = _need_model(cfg, VasicekDiscount, "solve-vasicek")
    grid = pide.build_grid(vd, cfg.risk, _domain(cfg, args))
    try:
        fld = pide.solve(grid, cfg.risk, vd, tol=_tol(cfg, args), max_iter=_max_iter(cfg, args))
    except pide.ConvergenceError as exc:
        _write_field(out, exc.field)
        raise
    _write_field(out, fld)
    print(f"iterations={fld.iterations} residual_norm={fmt(fld.residual_norm)} n_r={grid.n_r} n_x={grid.n_x}")
    return 0


def _detail_rows(report: verify.CheckReport):
    keys = [k for k, v in report.details[0].items() if isinstance(v, (int, float, np.floating, np.integer, str))]
    return keys, ([row[k] for k in keys] for row in report.details)


def cmd_verify(cfg: RunConfig | None, args, out: Path) -> int:
    kwargs = {}
    if args.paths is not None:
        kwargs["n_paths"] = args.paths
    if args.nx is not None:
        kwargs["n_x"] = args.nx
    if args.nr is not None:
        kwargs["n_r"] = args.nr
    if args.dt is not None:
        kwargs["dt"] = args.dt
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if args.tol is not None:
        kwargs["tol"] = args.tol
    if args.max_iter is not None:
        kwargs["max_iter"] = args.max_iter
    reports = verify.default_suite(**kwargs)
    _write_csv(out / "checks.csv", ["name", "metric", "tolerance", "passed"],
               ((r.name, r.metric, r.tolerance, r.passed) for r in reports))
    for r in reports:
        if r.details:
            keys, rows = _detail_rows(r)
            _write_csv(out / "details" / f"{_slug(r.name)}.csv", keys, rows)
        verdict = "PASS" if r.as_expected else "FAIL"
        role = "" if r.expected else " (negative control, expected to exceed tolerance)"
        print(f"{verdict} {r.name} metric={fmt(r.metric)} tolerance={fmt(r.tolerance)}{role}")
    return 0 if all(r.as_expected for r in reports) else 2


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name).strip("_")


def cmd_bound(cfg: RunConfig, args, out: Path) -> int:
    vd = _need_model(cfg, VasicekDiscount, "bound")
    rs = cfg.numbers("bound.r", [vd.r0])
    ss = cfg.numbers("bound.s", [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0])
    M = cfg.risk.M
    rows = []
    for r in rs:
        ub = float(ou.value_upper_bound(vd, M, r))
        h = ou.perpetual_payout(vd, M, r)
        for s in ss:
            if s < 0:
                raise ConfigError("bound.s", "times must be nonnegative")
            mom = ou.joint_moments(vd, r, s)
            f = float(ou.log_discount_expectation(vd, r, s))
            rows.append((r, s, f, mom.mean_r, mom.mean_U, mom.var_r, mom.var_U, mom.cov_rU, ub, h))
    _write_csv(out / "bound.csv", ["r", "s", "f", "mean_r", "mean_U", "var_r", "var_U", "cov_rU", "upper_bound",
                                   "perpetual_payout"], rows)
    print(f"rows={len(rows)} b={fmt(vd.b)} sigma_tilde_sq={fmt(vd.sigma_tilde_sq)}")
    return 0


COMMANDS = {
    "solve-gbm": cmd_solve_gbm,
    "mc": cmd_mc,
    "solve-vasicek": cmd_solve_vasicek,
    "verify": cmd_verify,
    "bound": cmd_bound,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="divctl", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="run configuration (section.key = value lines)")
    p.add_argument("--out", type=Path, default=Path("."), help="directory for CSV output")
    p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    p.add_argument("--paths", type=int, help="Monte Carlo paths per point")
    p.add_argument("--dt", type=float, help="Monte Carlo time step")
    p.add_argument("--nx", type=int, help="surplus grid nodes")
    p.add_argument("--nr", type=int, help="rate grid nodes")
    p.add_argument("--tol", type=float, help="PIDE residual tolerance")
    p.add_argument("--max-iter", type=int, dest="max_iter", help="PIDE sweep limit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            cfg = parse_config(args.config) if args.config else None
        else:
            if args.config is None:
                raise _Usage(f"{args.command} needs --config")
            cfg = parse_config(args.config)
        return COMMANDS[args.command](cfg, args, args.out)
    except (ConfigError, ParameterError, _Usage, ValueError, TypeError) as exc:
        print(f"divctl: error: {exc}", file=sys.stderr)
        return 1
    except (pide.ConvergenceError, pide.SchemeError, ArithmeticError) as exc:
        print(f"divctl: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
