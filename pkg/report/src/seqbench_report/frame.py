"""Loading and validating the results CSV.

The schema is the published interface between the benchmark runner and this
package; column names and order are checked exactly, and every numeric column
must parse finite. Cell strings are preserved verbatim alongside the typed
values so that rendered output can quote the file byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

RESULTS_COLUMNS = (
    "dataset", "model", "emb", "seqlen", "params",
    "p10", "r10", "ndcg10", "map10", "p20", "r20", "ndcg20", "map20",
    "kwh", "co2kg", "seconds",
)
METRIC_COLUMNS = ("p10", "r10", "ndcg10", "map10", "p20", "r20", "ndcg20", "map20")
INT_COLUMNS = ("emb", "seqlen", "params")
FLOAT_COLUMNS = METRIC_COLUMNS + ("kwh", "co2kg", "seconds")


class ResultsError(ValueError):
    """The CSV does not satisfy the results schema."""


@dataclass
class ResultsFrame:
    raw: pd.DataFrame    # every cell as written in the file
    typed: pd.DataFrame  # numeric columns parsed

    @classmethod
    def load(cls, path: str) -> "ResultsFrame":
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
        if tuple(raw.columns) != RESULTS_COLUMNS:
            raise ResultsError(
                f"{path}: expected columns {','.join(RESULTS_COLUMNS)}, "
                f"got {','.join(raw.columns)}"
            )
        typed = raw.copy()
        for col in INT_COLUMNS:
            try:
                typed[col] = typed[col].astype(np.int64)
            except ValueError as exc:
                raise ResultsError(f"{path}: column {col} must be integer: {exc}") from None
        for col in FLOAT_COLUMNS:
            try:
                typed[col] = typed[col].astype(np.float64)
            except ValueError as exc:
                raise ResultsError(f"{path}: column {col} must be numeric: {exc}") from None
            if not np.isfinite(typed[col]).all():
                raise ResultsError(f"{path}: column {col} contains non-finite values")
        return cls(raw=raw, typed=typed)

    @property
    def datasets(self) -> list[str]:
        return sorted(self.typed["dataset"].unique())

    def models(self, dataset: str) -> list[str]:
        mask = self.typed["dataset"] == dataset
        return sorted(self.typed.loc[mask, "model"].unique())

    def for_dataset(self, dataset: str) -> "ResultsFrame":
        mask = (self.typed["dataset"] == dataset).to_numpy()
        return ResultsFrame(
            raw=self.raw.loc[mask].reset_index(drop=True),
            typed=self.typed.loc[mask].reset_index(drop=True),
        )

    def __len__(self) -> int:
        return len(self.typed)
