"""Command line driver for the reporting tool.

Subcommands take the producer's output files and an output directory and
write figure files; paths of the written figures go to stdout.  Schema
mismatches exit with status 2 and a diff on stderr.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .plots import plot_field, plot_margins, plot_timeseries
from .schema import SchemaError


def _cmd_timeseries(args) -> int:
    if (args.envelope_p is None) != (args.envelope_q is None):
        print("error: --envelope-p and --envelope-q must be given together",
              file=sys.stderr)
        return 2
    written = plot_timeseries(args.csv, args.out, p=args.envelope_p,
                              q=args.envelope_q, fmt=args.format,
                              dpi=args.dpi)
    for path in written:
        print(path)
    return 0


def _cmd_field(args) -> int:
    for path in plot_field(args.dump, args.out, fmt=args.format,
                           dpi=args.dpi):
        print(path)
    return 0


def _cmd_margins(args) -> int:
    for path in plot_margins(args.json, args.out, fmt=args.format,
                             dpi=args.dpi):
        print(path)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dropflow-report",
        description="Render figures from solver run CSVs, field dumps "
                    "and gradient-bound sweeps.")
    ap.add_argument("--version", action="version",
                    version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="figures",
                        help="output directory (created if missing)")
    common.add_argument("--format", default="png",
                        choices=("png", "pdf", "svg"),
                        help="figure file format")
    common.add_argument("--dpi", type=int, default=150,
                        help="raster resolution")

    ts = sub.add_parser(
        "timeseries", parents=[common],
        help="plot the monitored functionals from a run CSV")
    ts.add_argument("csv", help="run CSV written by the solver")
    ts.add_argument("--envelope-p", type=float, default=None,
                    help="growth rate of the comparison curve overlaid "
                         "on the energy figure")
    ts.add_argument("--envelope-q", type=float, default=None,
                    help="offset rate of the comparison curve")
    ts.set_defaults(fn=_cmd_timeseries)

    fd = sub.add_parser(
        "field", parents=[common],
        help="plot n, c and |u| heatmaps from a field dump")
    fd.add_argument("dump", help="field dump written by the solver")
    fd.set_defaults(fn=_cmd_field)

    mg = sub.add_parser(
        "margins", parents=[common],
        help="histogram the margins of a gradient-bound sweep")
    mg.add_argument("json", help="sweep payload (check-bernstein --json)")
    mg.set_defaults(fn=_cmd_margins)
    return ap


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
