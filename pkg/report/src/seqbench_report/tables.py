"""Benchmark tables: one markdown table per dataset, best results marked.

Marking follows the usual benchmark-table convention: the best value in each
metric column is bold, the second-best underlined. Ties share the marking
(every row holding the best value is bold, and the underline goes to the next
distinct value). Cells quote the CSV text verbatim; nothing is recomputed or
reformatted.
"""

from __future__ import annotations

from .frame import ResultsFrame

FAMILY_ORDER = ("gru4rec", "narm", "core", "sasrec", "bert4rec")
SELECTION_METRIC = "ndcg10"


def metric_columns(ks) -> list[str]:
    cols = []
    for k in ks:
        cols += [f"p{k}", f"r{k}", f"ndcg{k}", f"map{k}"]
    return cols


def _model_order(present: list[str], requested) -> list[str]:
    if requested is not None:
        return list(requested)
    known = [m for m in FAMILY_ORDER if m in present]
    extra = sorted(m for m in present if m not in FAMILY_ORDER)
    return known + extra


def select_rows(frame: ResultsFrame, dataset: str, models=None):
    """One CSV row index per model: the run with the highest ndcg10.

    Returns (ordered model list, {model: row index or None}, whether any
    model had several runs to choose from).
    """
    sub = frame.for_dataset(dataset)
    present = sub.models(dataset)
    order = _model_order(present, models)
    chosen: dict[str, int | None] = {}
    multiple = False
    for model in order:
        mask = sub.typed["model"] == model
        if not mask.any():
            chosen[model] = None
            continue
        candidates = sub.typed.loc[mask, SELECTION_METRIC]
        multiple = multiple or len(candidates) > 1
        chosen[model] = int(candidates.idxmax())
    return sub, order, chosen, multiple


def _markings(values: dict[str, float]) -> dict[str, str]:
    """model -> 'best' | 'second' | '' for one metric column."""
    if not values:
        return {}
    distinct = sorted(set(values.values()), reverse=True)
    best = distinct[0]
    second = distinct[1] if len(distinct) > 1 else None
    out = {}
    for model, v in values.items():
        out[model] = "best" if v == best else "second" if v == second else ""
    return out


def make_table(frame: ResultsFrame, dataset: str, ks=(10, 20), models=None) -> str:
    """Markdown table for one dataset: a row per model, marked per column."""
    if dataset not in frame.datasets:
        raise ValueError(f"dataset {dataset!r} not in results ({', '.join(frame.datasets)})")
    sub, order, chosen, multiple = select_rows(frame, dataset, models)
    cols = metric_columns(ks)
    lines = [f"# {dataset}", ""]
    lines.append("| model | " + " | ".join(cols) + " |")
    lines.append("|---" * (len(cols) + 1) + "|")
    per_column_markings = {}
    for col in cols:
        values = {m: float(sub.typed.at[i, col]) for m, i in chosen.items() if i is not None}
        per_column_markings[col] = _markings(values)
    for model in order:
        idx = chosen[model]
        if idx is None:
            lines.append(f"| {model} | " + " | ".join(["n/a"] * len(cols)) + " |")
            continue
        cells = []
        for col in cols:
            text = sub.raw.at[idx, col]
            mark = per_column_markings[col].get(model, "")
            if mark == "best":
                text = f"**{text}**"
            elif mark == "second":
                text = f"<u>{text}</u>"
            cells.append(text)
        lines.append(f"| {model} | " + " | ".join(cells) + " |")
    missing = [m for m in order if chosen[m] is None]
    footnotes = []
    if missing:
        footnotes.append(f"Missing from results: {', '.join(missing)}.")
    if multiple:
        footnotes.append(
            f"Models with several runs show the one with the highest {SELECTION_METRIC}."
        )
    if footnotes:
        lines.append("")
        lines += footnotes
    return "\n".join(lines) + "\n"


def write_tables(frame: ResultsFrame, out_dir: str, datasets=None, ks=(10, 20), models=None):
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []
    for dataset in datasets or frame.datasets:
        path = os.path.join(out_dir, f"table-{dataset}.md")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(make_table(frame, dataset, ks=ks, models=models))
        written.append(path)
    return written
