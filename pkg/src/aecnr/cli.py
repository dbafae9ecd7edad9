"""Command line: ``aecnr run <config>`` and ``aecnr verify``."""

import argparse
import sys

from . import bench, verify


def _run(args):
    try:
        cfg = bench.load_config(args.config)
    except (bench.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out_dir = args.out or cfg.dir

    def progress(sid, path):
        print(f"scenario {sid} ({path}) done", file=sys.stderr)

    table, outputs = bench.run(cfg, jobs=args.jobs, progress=progress)
    paths = bench.write_artifacts(cfg, table, outputs, out_dir)
    print(f"{len(table.rows)} rows, {len(table.failures)} failures")
    for f in table.failures:
        print(f"failed: {f}", file=sys.stderr)
    for kind, p in paths.items():
        print(f"{kind}: {p}")
    return 0


def _verify(args):
    seed = 0 if args.seed is None else args.seed
    checks = verify.run_checks(seed)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="aecnr", description="GEIC vs extended MWF testbench")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment described by an INI config")
    r.add_argument("config")
    v = sub.add_parser("verify", help="oracle identity checks; nonzero exit on failure")
    for q in (r, v):
        q.add_argument("--out", help="output directory (overrides output.dir)")
        q.add_argument("--seed", type=int, help="base seed override")
        q.add_argument("--jobs", type=int, default=1, help="parallel scenario workers")
    r.set_defaults(func=_run)
    v.set_defaults(func=_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
