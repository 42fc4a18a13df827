"""Command-line entry point: ``haropt {run,compare,profile,check}``.

Exit codes: 0 on success, 1 on usage errors (bad flags, missing files, no
results), 2 on internal failures (including failed self-tests).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench
from .selfcheck import derivative_check, subproblem_oracle_check

log = logging.getLogger("haropt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    parser = _Parser(prog="haropt", description="History-aware adaptive regularization benchmarks.")
    parser.add_argument("--seed", type=int, default=42, help="seed for every random choice (default 42)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("run", help="execute a run matrix from an INI spec")
    p.add_argument("--spec", required=True, help="INI run spec")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("compare", help="scaled geometric means per method")
    p.add_argument("--out", required=True, help="directory written by 'run'")
    p.add_argument("--time-shift", type=float, default=bench.TIME_SHIFT)
    p.add_argument("--iter-shift", type=float, default=bench.ITER_SHIFT)

    p = sub.add_parser("profile", help="performance-profile data as TSV")
    p.add_argument("--out", required=True, help="directory written by 'run'")
    p.add_argument("--metric", default="n_H", choices=("n_f", "n_g", "n_H", "wall_time"))

    p = sub.add_parser("check", help="finite-difference and subproblem self-tests")
    p.add_argument("--instances", type=int, default=100)
    return parser


def _cmd_run(args):
    spec_path = Path(args.spec)
    if not spec_path.is_file():
        raise UsageError(f"spec file not found: {spec_path}")
    try:
        spec = bench.load_spec(spec_path, seed=args.seed)
    except bench.SpecError as exc:
        raise UsageError(f"invalid spec {spec_path}: {exc}") from exc

    def progress(cell, result, error):
        if error:
            print(f"{cell.cell_id}: error: {error}")
        else:
            print(f"{cell.cell_id}: {result.status} iters={result.iterations} n_H={result.counts[2]}")

    outcomes = bench.run_matrix(spec, args.out, base_dir=spec_path.parent, progress=progress)
    failed = sum(o.result is None or not o.result.status.solved for o in outcomes)
    print(f"{len(outcomes)} runs, {failed} not solved; results in {args.out}")
    return 0


def _records(out):
    out = Path(out)
    records = bench.load_records(out) if out.is_dir() else []
    if not records:
        raise UsageError(f"no results found in {out}")
    return records


def _cmd_compare(args):
    rows = bench.scaled_geometric_means(_records(args.out), args.time_shift, args.iter_shift)
    print(bench.format_sgm_table(rows))
    bench._atomic_write(Path(args.out) / "sgm.csv", bench.sgm_csv_text(rows))
    return 0


def _cmd_profile(args):
    records = _records(args.out)
    if len({r.method for r in records}) < 2:
        raise UsageError("a performance profile needs at least two methods")
    prof = bench.performance_profile(records, args.metric)
    path = Path(args.out) / f"profile_{args.metric}.tsv"
    bench._atomic_write(path, prof.to_tsv())
    for method in prof.curves:
        print(f"{method}: {prof.fraction(method, 0.0):.3f} at a=0, {prof.curves[method][-1][1]:.3f} at a={prof.curves[method][-1][0]:.3g}")
    print(f"wrote {path}")
    return 0


def _cmd_check(args):
    ok = True
    for name, ge, he, passed in derivative_check(seed=args.seed):
        ok &= passed
        print(f"{'ok  ' if passed else 'FAIL'} derivatives {name:<18} grad {ge:.2e} hess {he:.2e}")
    sub = subproblem_oracle_check(seed=args.seed, count=args.instances)
    ok &= sub.passed
    print(f"{'ok  ' if sub.passed else 'FAIL'} cubic subproblem vs brute force: {sub.count} instances "
          f"({sub.hard_count} hard case), worst gap {sub.worst_gap:.2e}")
    return 0 if ok else 2


COMMANDS = {"run": _cmd_run, "compare": _cmd_compare, "profile": _cmd_profile, "check": _cmd_check}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:
        # --help exits 0
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"haropt {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception:
        log.exception("internal failure")
        return 2


if __name__ == "__main__":
    sys.exit(cli_main())
