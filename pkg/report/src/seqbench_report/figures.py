"""Sweep figures: NDCG@10 against one experiment axis, one image per dataset.

Axes: ``seqlen`` and ``emb`` average NDCG@10 over the other sweep axis at each
x position (several runs can share an x); ``params`` and ``co2kg`` plot every
run as its own point on a log x-scale. Missing sweep points leave a gap in
the line; nothing is interpolated. Colors are keyed by model name so the same
model looks the same in every figure.
"""

from __future__ import annotations

import os
import warnings
import zlib

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .frame import ResultsFrame
from .tables import FAMILY_ORDER, _model_order

X_AXES = ("seqlen", "emb", "params", "co2kg")
LOG_AXES = ("params", "co2kg")
Y_COLUMN = "ndcg10"

X_LABELS = {
    "seqlen": "input sequence length L",
    "emb": "embedding size d",
    "params": "parameters",
    "co2kg": "CO2-eq (kg)",
}

_PALETTE = plt.get_cmap("tab10").colors


def model_color(name: str):
    """Stable color per model: pinned for the five families, hashed otherwise."""
    if name in FAMILY_ORDER:
        return _PALETTE[FAMILY_ORDER.index(name)]
    return _PALETTE[5 + zlib.crc32(name.encode("utf-8")) % (len(_PALETTE) - 5)]


def series(sub: ResultsFrame, model: str, x_axis: str):
    """x and y values for one model line, aggregation rules applied."""
    mask = (sub.typed["model"] == model).to_numpy()
    rows = sub.typed.loc[mask]
    if x_axis in ("seqlen", "emb"):
        grouped = rows.groupby(x_axis)[Y_COLUMN].mean()
        return grouped.index.to_numpy(dtype=float), grouped.to_numpy()
    ordered = rows.sort_values(x_axis)
    return ordered[x_axis].to_numpy(dtype=float), ordered[Y_COLUMN].to_numpy()


def build_figure(frame: ResultsFrame, dataset: str, x_axis: str):
    """One figure for one dataset; caller owns (and must close) the figure."""
    if x_axis not in X_AXES:
        raise ValueError(f"x_axis must be one of {X_AXES}, got {x_axis!r}")
    sub = frame.for_dataset(dataset)
    models = _model_order(sub.models(dataset), None)
    all_x = sorted(sub.typed[x_axis].astype(float).unique())
    scatter_only = len(all_x) < 2
    if scatter_only:
        warnings.warn(
            f"{dataset}: single {x_axis} value {all_x}, falling back to scatter",
            stacklevel=2,
        )
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for model in models:
        xs, ys = series(sub, model, x_axis)
        color = model_color(model)
        if scatter_only:
            ax.scatter(xs, ys, label=model, color=color)
            continue
        if x_axis in ("seqlen", "emb"):
            # Fixed x grid with NaN at absent points: gaps, no interpolation.
            grid = np.array(all_x, dtype=float)
            lookup = dict(zip(xs, ys))
            ys = np.array([lookup.get(x, np.nan) for x in grid])
            xs = grid
        ax.plot(xs, ys, marker="o", label=model, color=color)
    if x_axis in LOG_AXES and not scatter_only:
        ax.set_xscale("log")
    ax.set_xlabel(X_LABELS[x_axis])
    ax.set_ylabel("NDCG@10")
    ax.set_title(dataset)
    ax.legend()
    fig.tight_layout()
    return fig


def make_figure(
    frame: ResultsFrame,
    x_axis: str,
    out_dir: str,
    datasets=None,
    fmt: str = "png",
) -> list[str]:
    """Render one image per dataset; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for dataset in datasets or frame.datasets:
        fig = build_figure(frame, dataset, x_axis)
        path = os.path.join(out_dir, f"fig-{x_axis}-{dataset}.{fmt}")
        metadata = {"Date": None} if fmt == "svg" else {"Software": "seqbench-report"}
        fig.savefig(path, metadata=metadata)
        plt.close(fig)
        written.append(path)
    return written
