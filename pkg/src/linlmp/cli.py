"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable/invalid
inputs), 3 numerical failure (singular systems, infeasible or
non-convergent solves, failed validation checks).
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import reports
from .acpf import branch_flows_ac, case_dispatch, newton_pf
from .engine import SCENARIO_BOUNDS, ModelOptions, aea, solve_lmp
from .errors import (
    CaseParseError,
    ConvergenceError,
    DualConsistencyError,
    LinLmpError,
    NetworkValidationError,
    QpError,
    SingularSensitivityError,
)
from .network import load_case, merge_ratings, parse_ratings
from .sensitivity import build_sensitivity
from .validate import run_checks

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

_DATA_ERRORS = (CaseParseError, NetworkValidationError, FileNotFoundError, OSError)
_NUMERICAL_ERRORS = (
    QpError,
    SingularSensitivityError,
    ConvergenceError,
    DualConsistencyError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_case_args(p: argparse.ArgumentParser):
    p.add_argument("--case", required=True, help="case file (MATPOWER or native)")
    p.add_argument("--ratings", help="auxiliary 'from to rating_mva' file")


def _add_model_args(p: argparse.ArgumentParser):
    p.add_argument(
        "--scenario",
        choices=sorted(SCENARIO_BOUNDS),
        help="uniform voltage-bound preset",
    )
    p.add_argument("--vmin", type=float, help="custom uniform voltage lower bound")
    p.add_argument("--vmax", type=float, help="custom uniform voltage upper bound")
    p.add_argument("--load-scale", type=float, default=1.0)
    p.add_argument("--no-loss", action="store_true", help="solve the lossless model")
    p.add_argument("--loss-tol", type=float, default=1e-6,
                   help="|delta P_loss| convergence threshold, per-unit")
    p.add_argument("--max-iter", type=int, default=20)
    p.add_argument("--qp-tol", type=float, default=1e-8)


def _add_output_args(p: argparse.ArgumentParser):
    p.add_argument("--out-dir", default=".", help="directory for report files")
    p.add_argument("--format", choices=["csv", "structured-text"], default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="linlmp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[], help="price the network")
    _add_case_args(p)
    _add_model_args(p)
    _add_output_args(p)

    p = sub.add_parser("pf", help="Newton power flow at the case snapshot")
    _add_case_args(p)
    _add_output_args(p)

    p = sub.add_parser("sensitivity", help="dump the four GSDF matrices")
    _add_case_args(p)
    _add_output_args(p)

    p = sub.add_parser("validate", help="run the invariant battery")
    _add_case_args(p)
    _add_model_args(p)
    p.add_argument("--seed", type=int, default=None, help="probe sample seed")

    p = sub.add_parser("aea", help="average relative ALMP error of two reports")
    p.add_argument("result_csv")
    p.add_argument("benchmark_csv")

    return parser


def _load(args):
    net = load_case(args.case)
    if args.ratings:
        with open(args.ratings, "r", encoding="utf-8") as fh:
            net = merge_ratings(net, parse_ratings(fh.read()))
    return net


def _options(args) -> ModelOptions:
    vmin = vmax = None
    if args.scenario:
        if args.vmin is not None or args.vmax is not None:
            raise UsageError("--scenario conflicts with --vmin/--vmax")
        vmin, vmax = SCENARIO_BOUNDS[args.scenario]
    else:
        vmin, vmax = args.vmin, args.vmax
    return ModelOptions(
        v_min_override=vmin,
        v_max_override=vmax,
        load_scale=args.load_scale,
        loss_enabled=not args.no_loss,
        loss_tolerance=args.loss_tol,
        max_iterations=args.max_iter,
        qp_tolerance=args.qp_tol,
    )


class UsageError(Exception):
    pass


def _write(out_dir: str, name: str, content: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(content)
    return path


def cmd_solve(args) -> int:
    net = _load(args)
    opts = _options(args)
    start = time.perf_counter()
    run = solve_lmp(net, opts)
    wall = time.perf_counter() - start
    ext = reports.report_extension(args.format)
    written = [
        _write(args.out_dir, f"bus.{ext}", reports.bus_report(run, args.format)),
        _write(args.out_dir, f"branch.{ext}", reports.branch_report(run, args.format)),
        _write(args.out_dir, f"generator.{ext}",
               reports.generator_report(run, args.format)),
        _write(args.out_dir, f"loss_branch.{ext}",
               reports.loss_branch_report(run, args.format)),
        _write(args.out_dir, f"loss_bus.{ext}",
               reports.loss_bus_report(run, args.format)),
        _write(args.out_dir, "summary.txt",
               reports.summary_report(run, wall_time_s=wall)),
    ]
    scale = 1.0 / run.net.base_mva
    print(f"lambda_p {run.result.duals.lambda_p * scale:.6f} per MWh, "
          f"lambda_q {run.result.duals.lambda_q * scale:.6f} per MWh, "
          f"p_loss {run.loss.p_loss_total:.6f} pu, "
          f"iterations {len(run.result.trace) - 1}, "
          f"wall {wall:.3f}s")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_pf(args) -> int:
    net = _load(args)
    p_gen, _, v_set = case_dispatch(net)
    pf = newton_pf(net, p_gen, v_set=v_set)
    if not pf.converged:
        print(
            f"power flow did not converge after {pf.iterations} iterations "
            f"(max mismatch {pf.max_mismatch:.3e})",
            file=sys.stderr,
        )
        return EXIT_NUMERICAL
    acf = branch_flows_ac(pf, net)
    ext = reports.report_extension(args.format)
    written = [
        _write(args.out_dir, f"pf_bus.{ext}", reports.pf_bus_report(net, pf, args.format)),
        _write(args.out_dir, f"pf_branch.{ext}",
               reports.pf_branch_report(net, acf, args.format)),
    ]
    total_loss = acf.losses.sum()
    print(f"converged in {pf.iterations} iterations, "
          f"losses {total_loss.real:.6f} + j{total_loss.imag:.6f} pu")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    net = _load(args)
    bundle = build_sensitivity(net)
    ext = reports.report_extension(args.format)
    matrices = [
        ("gsdf_pp", bundle.gsdf_pp),
        ("gsdf_pq", bundle.gsdf_pq),
        ("gsdf_qp", bundle.gsdf_qp),
        ("gsdf_qq", bundle.gsdf_qq),
    ]
    for name, mat in matrices:
        path = _write(args.out_dir, f"{name}.{ext}",
                      reports.gsdf_report(net, mat, name, args.format))
        print(f"wrote {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    net = _load(args)
    opts = _options(args)
    kwargs = {} if args.seed is None else {"seed": args.seed}
    checks = run_checks(net, opts, **kwargs)
    failed = [c for c in checks if not c.passed]
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    if failed:
        print(f"{len(failed)} of {len(checks)} checks failed: "
              + ", ".join(c.name for c in failed), file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"all {len(checks)} checks passed")
    return EXIT_OK


def cmd_aea(args) -> int:
    ids_a, almp_a = reports.read_price_csv(args.result_csv)
    ids_b, almp_b = reports.read_price_csv(args.benchmark_csv)
    if set(ids_a) != set(ids_b):
        only_a = sorted(set(ids_a) - set(ids_b))[:5]
        only_b = sorted(set(ids_b) - set(ids_a))[:5]
        raise NetworkValidationError(
            f"bus sets differ: only in result {only_a}, only in benchmark {only_b}"
        )
    order = {b: k for k, b in enumerate(ids_b)}
    bench = np.array([almp_b[order[b]] for b in ids_a])
    try:
        value = aea(almp_a, bench, bus_ids=ids_a)
    except ValueError as exc:
        raise NetworkValidationError(str(exc))
    print(f"{value:.6f}")
    return EXIT_OK


_COMMANDS = {
    "solve": cmd_solve,
    "pf": cmd_pf,
    "sensitivity": cmd_sensitivity,
    "validate": cmd_validate,
    "aea": cmd_aea,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"linlmp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"linlmp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERICAL_ERRORS as exc:
        print(f"linlmp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LinLmpError as exc:
        print(f"linlmp: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
