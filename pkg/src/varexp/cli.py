"""``varexp`` command line: check-operator, solve, scan, selftest.

Exit codes: 0 success, 1 check failure, 2 config error, 3 below threshold,
4 stagnation.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

from . import selftest
from .config import ConfigError, RunConfig, load_config
from .grid import write_grid_dump
from .operators import check_hypotheses
from .solver import SolveReport, SolverConfigError, scan_lambda, solve

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_BELOW = 3
EXIT_STAGNATION = 4

STATUS_EXIT = {"two_solutions": EXIT_OK, "below_threshold": EXIT_BELOW, "stagnation": EXIT_STAGNATION}

REPORT_COLUMNS = [
    "lambda", "status", "I_u1", "residual_norm_u1", "I_u2", "mountain_pass_level_c",
    "residual_norm_u2", "ordering_violation", "min_u1", "min_u2", "iterations_u1", "iterations_u2",
    "multiplicity", "initial_path_max", "theorem_compliant", "hypotheses_pass", "u1_verified",
    "u2_verified", "message",
]


def fmt(value) -> str:
    """CSV cell: 17 significant digits for reals, lowercase booleans, blank for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.17g}"
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list], comments: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def report_row(rep: SolveReport) -> list:
    hyp = rep.hypothesis_report
    return [
        rep.lam, rep.status, rep.I_u1, rep.residual_norm_u1, rep.I_u2, rep.mountain_pass_level_c,
        rep.residual_norm_u2, rep.ordering_violation,
        float(rep.u1.values.min()), float(rep.u2.values.min()) if rep.u2 is not None else None,
        rep.iterations["u1"], rep.iterations["u2"], rep.multiplicity, rep.initial_path_max,
        rep.theorem_compliant, hyp.all_pass if hyp is not None else None,
        rep.verdict_u1.passed if rep.verdict_u1 else None,
        rep.verdict_u2.passed if rep.verdict_u2 else None,
        rep.message,
    ]


class _Run:
    """Resolved config, CLI overrides and output location for one command."""

    def __init__(self, args):
        self.quiet = args.quiet
        self.cfg: RunConfig = load_config(args.config)
        if args.seed is not None:
            self.cfg.solver.seed = args.seed
            self.cfg.entries["solver.seed"] = str(args.seed)
        if args.tol is not None:
            if not args.tol > 0:
                raise ConfigError(f"--tol must be positive, got {args.tol}")
            self.cfg.solver.tol = args.tol
            self.cfg.entries["solver.tol"] = repr(args.tol)
        out = args.out if args.out is not None else self.cfg.output_dir
        out = Path(out)
        if not out.is_absolute() and args.out is None:
            out = self.cfg.base_dir / out
        self.out = out
        self.echo = self.cfg.echo_lines()

    def say(self, msg: str) -> None:
        if not self.quiet:
            print(msg)

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def solve_kw(self) -> dict:
        s = self.cfg.solver
        return dict(
            tol=self.cfg.tol, max_iter=s.max_iter, path_nodes=s.path_nodes, seed=s.seed,
            n_starts=s.n_starts, hypothesis_samples=s.hypothesis_samples,
        )


def cmd_check_operator(args) -> int:
    run = _Run(args)
    cfg = run.cfg
    grid = cfg.build_grid()
    p = cfg.build_exponent(grid)
    model, warns = cfg.build_operator(p)
    rep = check_hypotheses(model, p, grid, cfg.solver.hypothesis_samples, cfg.solver.seed)
    constants = {"A2": rep.c1, "A4": rep.k}
    rows = [
        [name, rep.verdicts[name], constants.get(name), rep.worst_violation[name]]
        for name in ("A1", "A2", "A3", "A4", "A5")
    ]
    comments = run.echo + [f"note: {n}" for n in rep.notes] + [
        f"n_samples = {rep.n_samples}",
        f"flux_consistency = {fmt(rep.flux_consistency)}",
    ]
    path = run.path("hypotheses.csv")
    write_csv(path, ["name", "verdict", "constant_estimate", "worst_violation"], rows, comments)
    for w in warns:
        run.say(f"warning: {w}")
    for name, verdict, const, worst in rows:
        run.say(f"{name}  {'pass' if verdict else 'FAIL'}  constant={fmt(const)}  worst={worst:.3g}")
    run.say(f"wrote {path}")
    return EXIT_OK if rep.all_pass else EXIT_FAIL


def _write_solution(run: _Run, rep: SolveReport) -> None:
    path = run.path("report.csv")
    write_csv(path, REPORT_COLUMNS, [report_row(rep)], run.echo + ([rep.message] if rep.message else []))
    echo = run.echo + [f"lambda = {fmt(rep.lam)}"]
    write_grid_dump(run.path("u1.grid"), rep.u1, comments=echo + ["field = u1"])
    if rep.u2 is not None:
        write_grid_dump(run.path("u2.grid"), rep.u2, comments=echo + ["field = u2"])


def _summarize(run: _Run, rep: SolveReport) -> None:
    run.say(f"lambda={rep.lam:g} status={rep.status} I(u1)={rep.I_u1:.10g} I(u2)={rep.I_u2:.10g}")
    if rep.message:
        run.say(f"  {rep.message}")


def cmd_solve(args) -> int:
    run = _Run(args)
    pr = run.cfg.problem
    if pr.lam is None:
        if pr.lambda_grid is None or len(pr.lambda_grid) != 1:
            raise ConfigError("solve needs problem.lambda (or a one-entry problem.lambda_grid)")
    params = run.cfg.build_params()
    rep = solve(params, **run.solve_kw())
    _write_solution(run, rep)
    _summarize(run, rep)
    return STATUS_EXIT[rep.status]


def cmd_scan(args) -> int:
    run = _Run(args)
    pr = run.cfg.problem
    lams = pr.lambda_grid if pr.lambda_grid is not None else ((pr.lam,) if pr.lam is not None else None)
    if not lams:
        raise ConfigError("scan needs problem.lambda_grid")
    if all(v == 0 for v in lams):
        raise ConfigError("lambda grid must contain a positive value")
    params = run.cfg.build_params(lam=lams[0])
    if len(lams) == 1:
        # one row: identical to solve, plus the scan table
        rep = solve(params, **run.solve_kw())
        _write_solution(run, rep)
        star = rep.lam if rep.I_u1 < -run.cfg.tol else None
        _write_scan(run, [rep], (0.0, rep.lam) if star is not None else None, star, [])
        _summarize(run, rep)
        return STATUS_EXIT[rep.status]
    try:
        res = scan_lambda(params, lams, **run.solve_kw())
    except SolverConfigError as exc:
        raise ConfigError(str(exc)) from exc
    path = _write_scan(run, res.rows, res.bracket, res.lambda_star_estimate, res.concavity_violations)
    for rep in res.rows:
        _summarize(run, rep)
    run.say(f"lambda_star_bracket = {res.bracket}")
    run.say(f"wrote {path}")
    if any(r.two_solutions for r in res.rows):
        return EXIT_OK
    return EXIT_STAGNATION if any(r.status == "stagnation" for r in res.rows) else EXIT_BELOW


def _write_scan(run: _Run, reps, bracket, star, concavity) -> Path:
    rows = [report_row(r) for r in reps]
    lo, hi = bracket if bracket else (None, None)
    rows.append(["lambda_star_bracket", lo, hi] + [None] * (len(REPORT_COLUMNS) - 3))
    comments = run.echo + [
        f"lambda_star_estimate = {fmt(star)}",
        f"concavity_violations = {len(concavity)}",
    ]
    path = run.path("scan.csv")
    write_csv(path, REPORT_COLUMNS, rows, comments)
    return path


def cmd_selftest(args) -> int:
    ok = selftest.run(emit=None if args.quiet else print)
    return EXIT_OK if ok else EXIT_FAIL


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: output.dir from the config)")
    common.add_argument("--seed", type=_u64, help="override solver.seed")
    common.add_argument("--tol", type=float, help="override solver.tol")
    common.add_argument("--quiet", action="store_true", help="suppress console output")

    parser = argparse.ArgumentParser(
        prog="varexp",
        description="Two nonnegative solutions of a variable-exponent quasilinear Dirichlet problem.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("check-operator", cmd_check_operator, "sample the structural hypotheses of the operator"),
        ("solve", cmd_solve, "find the minimizer and the mountain-pass solution for one lambda"),
        ("scan", cmd_scan, "solve over problem.lambda_grid and bracket the threshold"),
    ):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("config", help="key = value configuration file")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("selftest", parents=[common], help="run the invariant suite")
    sp.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
