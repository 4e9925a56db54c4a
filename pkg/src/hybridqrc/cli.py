"""Command line: run, validate, list-tasks."""
from __future__ import annotations

import argparse
import sys

from .experiments import RUNNERS, TASK_DEFAULTS
from .harness import OUTPUT_ENV, SpecError, emit_outputs, load_spec, resolve_output_dir, run_experiment


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridqrc", description="Quantum reservoir experiments on hybrid inputs.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run every sweep cell of a spec and write result tables")
    run.add_argument("spec")
    run.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and the spec)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    run.add_argument("--seed", type=int, help="base seed (overrides the spec)")
    val = sub.add_parser("validate", help="check a spec and print it with defaults filled in")
    val.add_argument("spec")
    sub.add_parser("list-tasks", help="print the available tasks and their parameters")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-tasks":
        for name in sorted(RUNNERS):
            doc = (RUNNERS[name].__doc__ or "").strip().splitlines()[0]
            print(f"{name}: {doc}")
            print("    " + ", ".join(f"{k}={v!r}" for k, v in TASK_DEFAULTS[name].items()))
        return 0
    try:
        spec = load_spec(args.spec)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command == "validate":
        from .harness import dump_spec

        print(dump_spec(spec), end="")
        return 0
    if args.seed is not None:
        spec.seed = args.seed
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 1
    out_dir = resolve_output_dir(args.out, spec)
    table = run_experiment(spec, jobs=args.jobs)
    try:
        written = emit_outputs(table, out_dir)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for row in table.summary():
        point = ", ".join(f"{k}={v}" for k, v in row["params"].items())
        print(f"[{point or 'base'}] {row['metric']}: {row['mean']:.6g} +/- {row['std']:.3g} (n={row['n']})")
    for f in table.failures:
        print(f"cell {f['point']} trial {f['trial']} failed: {f['error']}", file=sys.stderr)
    print(f"wrote {len(written)} files to {out_dir}")
    return 2 if table.failures else 0


if __name__ == "__main__":
    sys.exit(main())
