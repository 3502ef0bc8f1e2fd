"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 run failure (training diverged or sweep points failed).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import defaultdict

from .data import load_processed
from .errors import ConfigError, DataError, ParseError, TrainingDivergedError
from .evaluator import evaluate
from .models import load_checkpoint
from .runner import (
    RESULTS_COLUMNS,
    dataset_format,
    load_config,
    preprocess,
    read_results,
    run_plan,
)


def _neg_arg(value: str):
    if value == "all":
        return "all"
    try:
        parsed = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--neg expects an integer or 'all', got {value!r}"
        ) from None
    if parsed < 1:
        raise argparse.ArgumentTypeError(f"--neg must be >= 1, got {parsed}")
    return parsed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqbench",
        description="Sequential-recommendation benchmark: preprocess, run sweeps, evaluate, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="parse + 5-core filter a raw dataset into a directory")
    p.add_argument("--dataset", required=True, help="dataset name (e.g. ml-100k) or format name")
    p.add_argument("--in", dest="in_path", required=True, help="raw interactions file")
    p.add_argument("--out", required=True, help="output directory for the processed artifact")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("run", help="execute the sweep described by a config file")
    p.add_argument("--config", required=True, help="experiment config (YAML)")
    p.add_argument("--parallel", type=int, default=1, metavar="N", help="worker processes")
    p.add_argument("--resume", action="store_true", help="skip points already completed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a processed dataset")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--dataset", required=True, help="processed dataset directory")
    p.add_argument("--neg", type=_neg_arg, default=100, help="negatives per trial, or 'all'")
    p.add_argument("--seed", type=int, default=0, help="evaluation negative-sampling seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render tables (and figures when the report package is installed)")
    p.add_argument("--results", required=True, help="results CSV from a run")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    return parser


def cmd_preprocess(args) -> int:
    fmt = dataset_format(args.dataset)
    _, stats = preprocess(fmt, args.in_path, args.out)
    print(
        f"{args.dataset}: {stats['users']} users, {stats['items']} items, "
        f"{stats['interactions']} interactions -> {args.out}"
    )
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.parallel < 1:
        raise ConfigError(f"--parallel must be >= 1, got {args.parallel}")
    records = run_plan(cfg, parallel=args.parallel, resume=args.resume, log=print)
    failed = [r for r in records if r.status != "ok"]
    print(
        f"{len(records) - len(failed)}/{len(records)} points ok; "
        f"results in {os.path.join(cfg.out, 'results.csv')}"
    )
    return 3 if failed else 0


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    split = load_processed(args.dataset)
    if split.num_items != model.num_items:
        raise DataError(
            f"checkpoint was trained on {model.num_items} items but "
            f"{args.dataset} has {split.num_items}"
        )
    report = evaluate(model, split, "test", m_neg_eval=args.neg, seed=args.seed)
    payload = {
        "family": model.family,
        "d": model.config.d,
        "L": model.config.L,
        "params": model.count_params(),
        "num_users": report.num_users,
        "m_neg_eval": args.neg,
        **report.flat(),
    }
    print(json.dumps(payload, indent=2))
    return 0


def cmd_report(args) -> int:
    try:
        from seqbench_report.cli import main as report_main
    except ImportError:
        write_fallback_report(args.results, args.out)
        print(f"markdown tables in {args.out} (install seqbench-report for figures)")
        return 0
    return report_main(["--results", args.results, "--out", args.out])


def write_fallback_report(results_csv: str, out_dir: str) -> list[str]:
    """Plain per-dataset markdown tables straight from the CSV, no recomputation."""
    rows = read_results(results_csv)
    os.makedirs(out_dir, exist_ok=True)
    by_dataset = defaultdict(list)
    for row in rows:
        by_dataset[row["dataset"]].append(row)
    written = []
    for dataset, dataset_rows in sorted(by_dataset.items()):
        path = os.path.join(out_dir, f"table-{dataset}.md")
        cols = RESULTS_COLUMNS[1:]  # dataset is the file name
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {dataset}\n\n")
            fh.write("| " + " | ".join(cols) + " |\n")
            fh.write("|" + "---|" * len(cols) + "\n")
            for row in sorted(
                dataset_rows, key=lambda r: (r["model"], int(r["emb"]), int(r["seqlen"]))
            ):
                fh.write("| " + " | ".join(row[c] for c in cols) + " |\n")
        written.append(path)
    return written


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; that code is reserved for data errors.
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (ConfigError, ParseError, DataError, TrainingDivergedError) as exc:
        print(f"seqbench: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"seqbench: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
