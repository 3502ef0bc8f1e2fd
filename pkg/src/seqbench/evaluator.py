"""Ranking evaluation: one positive against sampled negatives, closed-form metrics.

Leave-one-out guarantees a single relevant item per trial, so every metric is a
function of the positive's rank alone. Ties are broken pessimistically: any
candidate scoring equal to the positive is counted as ranked above it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SplitDataset, pad_window, sample_negatives
from .errors import DataError
from .rng import user_rng

K_VALUES = (10, 20)


@dataclass
class RankedTrial:
    user: int
    candidates: np.ndarray  # positive first, then negatives
    scores: np.ndarray
    rank: int


@dataclass
class MetricReport:
    precision: dict[int, float]
    recall: dict[int, float]
    ndcg: dict[int, float]
    map: dict[int, float]
    num_users: int
    m_neg_eval: int | str
    seed: int
    k_values: tuple[int, ...] = K_VALUES

    def flat(self) -> dict[str, float]:
        """Metric columns in the results-CSV naming scheme (p10, r10, ...)."""
        out = {}
        for k in self.k_values:
            out[f"p{k}"] = self.precision[k]
            out[f"r{k}"] = self.recall[k]
            out[f"ndcg{k}"] = self.ndcg[k]
            out[f"map{k}"] = self.map[k]
        return out

    def get(self, metric: str, k: int) -> float:
        return getattr(self, metric)[k]


def rank_positive(scores: np.ndarray, positive_index: int) -> int:
    """1-based rank of the positive; ties count against it."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite to rank")
    pos = scores[positive_index]
    at_or_above = int((scores >= pos).sum())  # includes the positive itself
    return at_or_above


def metrics_at_k(rank: int, k: int) -> tuple[float, float, float, float]:
    """(precision, recall, ndcg, map) under a single relevant item."""
    if rank < 1 or k < 1:
        raise ValueError(f"rank and k must be >= 1, got rank={rank}, k={k}")
    if rank > k:
        return 0.0, 0.0, 0.0, 0.0
    return 1.0 / k, 1.0, 1.0 / np.log2(rank + 1.0), 1.0 / rank


def _candidates_for(user, target, m_neg_eval, num_items, rng):
    if m_neg_eval == "all":
        negatives = np.array(
            [i for i in range(1, num_items + 1) if i not in user.consumed],
            dtype=np.int64,
        )
    else:
        negatives = sample_negatives(
            user.consumed, int(m_neg_eval), num_items, rng, user=user.user
        )
    return np.concatenate([[target], negatives])


def evaluate(
    model,
    split: SplitDataset,
    phase: str,
    m_neg_eval: int | str = 100,
    seed: int = 0,
    batch_size: int = 256,
    k_values: tuple[int, ...] = K_VALUES,
    keep_trials: bool = False,
) -> MetricReport | tuple[MetricReport, list[RankedTrial]]:
    """Score every phase pair and average the per-user closed-form metrics.

    Negatives come from a per-(seed, phase, user) substream, so results do not
    depend on evaluation order or batching.
    """
    pairs = list(split.eval_pairs(phase))
    if not pairs:
        raise DataError(f"split has no {phase} targets to evaluate")
    length = model.config.L
    table = model.embedding.data
    sums = {m: {k: 0.0 for k in k_values} for m in ("precision", "recall", "ndcg", "map")}
    trials: list[RankedTrial] = []
    for lo in range(0, len(pairs), batch_size):
        chunk = pairs[lo: lo + batch_size]
        windows = np.stack([pad_window(inp, length) for _, inp, _ in chunk])
        reps = model.encode(windows).data
        for (user, _, target), z in zip(chunk, reps):
            rng = user_rng(seed, f"eval-negatives/{phase}", user.user)
            candidates = _candidates_for(user, target, m_neg_eval, split.num_items, rng)
            scores = table[candidates] @ z
            rank = rank_positive(scores, 0)
            for k in k_values:
                p, r, g, a = metrics_at_k(rank, k)
                sums["precision"][k] += p
                sums["recall"][k] += r
                sums["ndcg"][k] += g
                sums["map"][k] += a
            if keep_trials:
                trials.append(RankedTrial(user.user, candidates, scores, rank))
    n = len(pairs)
    report = MetricReport(
        precision={k: float(sums["precision"][k] / n) for k in k_values},
        recall={k: float(sums["recall"][k] / n) for k in k_values},
        ndcg={k: float(sums["ndcg"][k] / n) for k in k_values},
        map={k: float(sums["map"][k] / n) for k in k_values},
        num_users=n,
        m_neg_eval=m_neg_eval,
        seed=seed,
    )
    return (report, trials) if keep_trials else report
