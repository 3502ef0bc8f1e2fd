"""Command-line entry point: tables and figures from one results CSV.

Exit codes: 0 success, 1 usage error, 2 unreadable or invalid results file.
"""

from __future__ import annotations

import argparse
import sys

from .figures import X_AXES, make_figure
from .frame import ResultsError, ResultsFrame
from .tables import write_tables


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqbench-report",
        description="Render markdown tables and sweep figures from a seqbench results CSV.",
    )
    parser.add_argument("--results", required=True, help="results CSV file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--datasets", nargs="+", metavar="NAME",
        help="subset of datasets to render (default: all in the CSV)",
    )
    parser.add_argument(
        "--figures", nargs="+", choices=X_AXES, metavar="AXIS",
        help=f"figure families to render from {X_AXES} (default: all)",
    )
    parser.add_argument(
        "--format", choices=("png", "svg"), default="png", help="figure file format",
    )
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        frame = ResultsFrame.load(args.results)
    except (OSError, ResultsError) as exc:
        print(f"seqbench-report: error: {exc}", file=sys.stderr)
        return 2
    datasets = args.datasets
    if datasets:
        unknown = [d for d in datasets if d not in frame.datasets]
        if unknown:
            print(
                f"seqbench-report: error: no rows for dataset(s) {', '.join(unknown)} "
                f"(available: {', '.join(frame.datasets)})",
                file=sys.stderr,
            )
            return 1
    written = write_tables(frame, args.out, datasets=datasets)
    for axis in args.figures or X_AXES:
        written += make_figure(frame, axis, args.out, datasets=datasets, fmt=args.format)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
