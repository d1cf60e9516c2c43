"""Command line entry point: ``delaysync run|report|plot-data|configs``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, bundled_configs
from .runner import build_report, emit_plot_data, finish, load_traces, run_config_file


def _run(args):
    result = run_config_file(args.config, args.out, args.workers)
    sys.stdout.write(result.report.to_text())
    print(f"wrote {len(result.files)} files to {result.out_dir}")


def _report(args):
    cfg, traces = load_traces(args.trace_dir)
    if args.write:
        finish(cfg, traces, args.trace_dir)
    sys.stdout.write(build_report(cfg, traces).to_text())


def _plot_data(args):
    cfg, traces = load_traces(args.trace_dir)
    if args.runs:
        wanted = args.runs.split(",")
        missing = [w for w in wanted if w not in traces]
        if missing:
            raise ValueError(f"unknown run ids: {', '.join(missing)} (have {', '.join(traces)})")
        traces = {w: traces[w] for w in wanted}
    path = emit_plot_data(traces, args.quantity, index=args.index,
                          out_dir=args.trace_dir, path=args.output)
    print(path)


def _configs(args):
    for name in bundled_configs():
        print(name)


def build_parser():
    p = argparse.ArgumentParser(prog="delaysync", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate every (method, r) in a config")
    run.add_argument("config", help="config file, or the name of a bundled config")
    run.add_argument("--out", help="output directory (default: runs/<config name>)")
    run.add_argument("--workers", type=int, default=1, help="concurrent simulations")
    run.set_defaults(func=_run)

    rep = sub.add_parser("report", help="recompute the threshold table from stored traces")
    rep.add_argument("trace_dir")
    rep.add_argument("--write", action="store_true", help="also rewrite report, summary and plot files")
    rep.set_defaults(func=_report)

    pd = sub.add_parser("plot-data", help="multi-series CSV for one quantity")
    pd.add_argument("trace_dir")
    pd.add_argument("--quantity", choices=("param", "V"), required=True)
    pd.add_argument("--index", type=int, help="parameter number (1-based) for --quantity param")
    pd.add_argument("--runs", help="comma-separated run ids, e.g. chen,aug-r3,aug-r5")
    pd.add_argument("--output", help="output file (default: plot_<quantity>.csv in trace_dir)")
    pd.set_defaults(func=_plot_data)

    cf = sub.add_parser("configs", help="list bundled configs")
    cf.set_defaults(func=_configs)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except ConfigError as exc:
        print("error: invalid configuration", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
