"""Dataset parsing, filtering, splitting, and batch construction.

The pipeline is: raw file -> interactions -> 5-core filter -> id-mapped per-user
sequences -> leave-one-out split -> padded training batches. Everything is
deterministic given the input file and the RNG streams handed in by the caller.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, DataError, ParseError

PAD_ID = 0

FORMATS = ("movielens", "amazon", "foursquare", "canonical")


class Interaction(NamedTuple):
    user: str
    item: str
    rating: float
    timestamp: int


class Vocab:
    """Raw string ids mapped to contiguous ints starting at 1; 0 is the pad."""

    def __init__(self):
        self._id: dict[str, int] = {}
        self._raw: list[str | None] = [None]

    def add(self, raw: str) -> int:
        got = self._id.get(raw)
        if got is None:
            got = len(self._raw)
            self._id[raw] = got
            self._raw.append(raw)
        return got

    def id_of(self, raw: str) -> int:
        return self._id[raw]

    def raw_of(self, idx: int) -> str:
        if not 1 <= idx < len(self._raw):
            raise KeyError(f"id {idx} not in vocabulary")
        return self._raw[idx]

    def __len__(self) -> int:
        return len(self._raw) - 1

    def __contains__(self, raw: str) -> bool:
        return raw in self._id

    def write_tsv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for idx in range(1, len(self._raw)):
                fh.write(f"{self._raw[idx]}\t{idx}\n")

    @classmethod
    def read_tsv(cls, path: str) -> "Vocab":
        vocab = cls()
        with open(path, encoding="utf-8") as fh:
            entries = []
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2 or not parts[1].isdigit():
                    raise ParseError(f"{path}:{lineno}: expected 'raw_key\\tid'")
                entries.append((parts[0], int(parts[1])))
        vocab._raw = [None] * (len(entries) + 1)
        for raw, idx in entries:
            if not 1 <= idx <= len(entries) or vocab._raw[idx] is not None:
                raise DataError(f"vocab sidecar {path} ids are not contiguous from 1")
            vocab._id[raw] = idx
            vocab._raw[idx] = raw
        return vocab


@dataclass(frozen=True)
class UserSequence:
    user: int
    raw_user: str
    items: tuple[int, ...]


@dataclass(frozen=True)
class UserSplit:
    user: int
    raw_user: str
    train: tuple[int, ...]
    val: int | None
    test: int
    consumed: frozenset[int]    # every item the user touched, any phase
    train_pool: frozenset[int]  # train + val only; training negatives avoid these

    @property
    def test_input(self) -> tuple[int, ...]:
        return self.train + (self.val,) if self.val is not None else self.train


@dataclass
class SplitDataset:
    users: list[UserSplit]
    num_items: int
    item_vocab: Vocab | None = None
    user_vocab: Vocab | None = None

    @property
    def num_users(self) -> int:
        return len(self.users)

    def eval_pairs(self, phase: str):
        """Yield (user_split, input_items, target) for 'val' or 'test'."""
        if phase == "val":
            for u in self.users:
                if u.val is not None:
                    yield u, u.train, u.val
        elif phase == "test":
            for u in self.users:
                yield u, u.test_input, u.test
        else:
            raise ConfigError(f"unknown eval phase {phase!r}, expected 'val' or 'test'")


# ---------------------------------------------------------------------------
# parsing

def parse_dataset(fmt: str, path: str) -> list[Interaction]:
    """Read one raw file into interactions; malformed lines raise ParseError."""
    if fmt not in FORMATS:
        raise ConfigError(f"unknown dataset format {fmt!r}, expected one of {FORMATS}")
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    with open(path, encoding="utf-8", errors="replace") as fh:
        lines = fh.read().splitlines()
    if fmt == "movielens":
        return _parse_movielens(path, lines)
    if fmt == "amazon":
        return _parse_amazon(path, lines)
    if fmt == "foursquare":
        return _parse_foursquare(path, lines)
    return _parse_canonical(path, lines)


def _fail(path: str, lineno: int, msg: str) -> None:
    raise ParseError(f"{path}:{lineno}: {msg}")


def _parse_movielens(path: str, lines: list[str]) -> list[Interaction]:
    # three MovieLens layouts: tab-separated u.data, '::'-separated, csv with header
    first = next((l for l in lines if l.strip()), "")
    if "::" in first:
        sep = "::"
    elif "\t" in first:
        sep = "\t"
    else:
        sep = ","
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split(sep)
        if lineno == 1 and sep == "," and parts and not _is_number(parts[-1]):
            continue  # header row
        if len(parts) != 4:
            _fail(path, lineno, f"expected 4 fields separated by {sep!r}, got {len(parts)}")
        user, item, rating, ts = (p.strip() for p in parts)
        if not _is_number(rating) or not _is_number(ts):
            _fail(path, lineno, f"non-numeric rating/timestamp {rating!r}/{ts!r}")
        out.append(Interaction(user, item, float(rating), int(float(ts))))
    return out


def _parse_amazon(path: str, lines: list[str]) -> list[Interaction]:
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            _fail(path, lineno, f"expected 4 comma-separated fields, got {len(parts)}")
        user, item, rating, ts = (p.strip() for p in parts)
        if lineno == 1 and not _is_number(ts):
            continue  # tolerate a header row
        if not _is_number(rating) or not _is_number(ts):
            _fail(path, lineno, f"non-numeric rating/timestamp {rating!r}/{ts!r}")
        out.append(Interaction(user, item, float(rating), int(float(ts))))
    return out


_FOURSQUARE_TIME = "%a %b %d %H:%M:%S %z %Y"


def _parse_foursquare(path: str, lines: list[str]) -> list[Interaction]:
    # 8 tab-separated columns; only user, venue, and the trailing UTC time are used
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 8:
            _fail(path, lineno, f"expected 8 tab-separated fields, got {len(parts)}")
        user, venue, when = parts[0].strip(), parts[1].strip(), parts[7].strip()
        try:
            ts = int(datetime.strptime(when, _FOURSQUARE_TIME).timestamp())
        except ValueError:
            _fail(path, lineno, f"unparseable check-in time {when!r}")
        out.append(Interaction(user, venue, 1.0, ts))
    return out


def _parse_canonical(path: str, lines: list[str]) -> list[Interaction]:
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            _fail(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
        user, item, ts = (p.strip() for p in parts)
        if not _is_number(ts):
            _fail(path, lineno, f"non-numeric timestamp {ts!r}")
        out.append(Interaction(user, item, 1.0, int(float(ts))))
    return out


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# filtering and splitting

def five_core_filter(
    interactions: list[Interaction], min_count: int = 5
) -> list[Interaction]:
    """Drop items then users with fewer than ``min_count`` events, to a fixpoint.

    Event order is preserved, so downstream tie-breaking is stable.
    """
    current = interactions
    while True:
        item_counts: dict[str, int] = {}
        for it in current:
            item_counts[it.item] = item_counts.get(it.item, 0) + 1
        kept = [it for it in current if item_counts[it.item] >= min_count]
        user_counts: dict[str, int] = {}
        for it in kept:
            user_counts[it.user] = user_counts.get(it.user, 0) + 1
        kept = [it for it in kept if user_counts[it.user] >= min_count]
        if len(kept) == len(current):
            return kept
        current = kept


def build_sequences(
    interactions: list[Interaction],
    item_vocab: Vocab | None = None,
    user_vocab: Vocab | None = None,
) -> tuple[Vocab, Vocab, list[UserSequence]]:
    """Globally sort by timestamp (stable) and assign ids by first appearance.

    Passing existing vocabs pins the id assignment instead (used when loading
    a preprocessed directory whose sidecar already fixes the mapping).
    """
    ordered = sorted(interactions, key=lambda it: it.timestamp)
    fixed = item_vocab is not None
    if item_vocab is None:
        item_vocab = Vocab()
    if user_vocab is None:
        user_vocab = Vocab()
    per_user: dict[int, list[int]] = {}
    raw_users: dict[int, str] = {}
    for it in ordered:
        uid = user_vocab.id_of(it.user) if fixed else user_vocab.add(it.user)
        iid = item_vocab.id_of(it.item) if fixed else item_vocab.add(it.item)
        per_user.setdefault(uid, []).append(iid)
        raw_users[uid] = it.user
    seqs = [
        UserSequence(uid, raw_users[uid], tuple(items))
        for uid, items in sorted(per_user.items())
    ]
    return item_vocab, user_vocab, seqs


def leave_one_out_split(
    sequences: list[UserSequence],
    num_items: int,
    item_vocab: Vocab | None = None,
    user_vocab: Vocab | None = None,
) -> SplitDataset:
    """Last item -> test, second-to-last -> validation (when length allows).

    Users with a single event cannot form a (train, test) pair and are dropped.
    """
    users = []
    for seq in sequences:
        n = len(seq.items)
        if n <= 1:
            continue
        test = seq.items[-1]
        val = seq.items[-2] if n >= 3 else None
        train = seq.items[: n - (2 if val is not None else 1)]
        users.append(
            UserSplit(
                user=seq.user,
                raw_user=seq.raw_user,
                train=train,
                val=val,
                test=test,
                consumed=frozenset(seq.items),
                train_pool=frozenset(train) | ({val} if val is not None else set()),
            )
        )
    return SplitDataset(users, num_items, item_vocab, user_vocab)


def load_dataset(fmt: str, path: str, min_count: int = 5) -> SplitDataset:
    """Raw file all the way to a split dataset; DataError if nothing survives."""
    interactions = five_core_filter(parse_dataset(fmt, path), min_count)
    if not interactions:
        raise DataError(f"no interactions survive {min_count}-core filtering of {path}")
    item_vocab, user_vocab, seqs = build_sequences(interactions)
    return leave_one_out_split(seqs, len(item_vocab), item_vocab, user_vocab)


# ---------------------------------------------------------------------------
# processed-directory round trip

def dataset_stats(interactions: list[Interaction]) -> dict[str, int]:
    return {
        "users": len({it.user for it in interactions}),
        "items": len({it.item for it in interactions}),
        "interactions": len(interactions),
    }


def write_processed(
    out_dir: str,
    interactions: list[Interaction],
    item_vocab: Vocab,
    user_vocab: Vocab,
) -> dict[str, int]:
    """Write dataset.tsv (raw ids, sorted by user then time), vocab + stats sidecars."""
    os.makedirs(out_dir, exist_ok=True)
    ordered = sorted(
        interactions, key=lambda it: (user_vocab.id_of(it.user), it.timestamp)
    )
    with open(os.path.join(out_dir, "dataset.tsv"), "w", encoding="utf-8") as fh:
        for it in ordered:
            fh.write(f"{it.user}\t{it.item}\t{it.timestamp}\n")
    item_vocab.write_tsv(os.path.join(out_dir, "items.vocab.tsv"))
    user_vocab.write_tsv(os.path.join(out_dir, "users.vocab.tsv"))
    stats = dataset_stats(interactions)
    with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return stats


def load_processed(in_dir: str) -> SplitDataset:
    """Read a directory written by write_processed; the sidecars pin all ids."""
    tsv = os.path.join(in_dir, "dataset.tsv")
    items_sidecar = os.path.join(in_dir, "items.vocab.tsv")
    users_sidecar = os.path.join(in_dir, "users.vocab.tsv")
    for needed in (tsv, items_sidecar, users_sidecar):
        if not os.path.exists(needed):
            raise DataError(
                f"{in_dir} is not a processed dataset (missing {os.path.basename(needed)})"
            )
    item_vocab = Vocab.read_tsv(items_sidecar)
    user_vocab = Vocab.read_tsv(users_sidecar)
    interactions = parse_dataset("canonical", tsv)
    item_vocab, user_vocab, seqs = build_sequences(interactions, item_vocab, user_vocab)
    return leave_one_out_split(seqs, len(item_vocab), item_vocab, user_vocab)


# ---------------------------------------------------------------------------
# windows, negatives, batches

def pad_window(items: Iterable[int], length: int) -> np.ndarray:
    """Most recent ``length`` items, left-padded with 0 to exactly ``length``."""
    if length < 1:
        raise ConfigError(f"window length must be >= 1, got {length}")
    items = list(items)[-length:]
    out = np.zeros(length, dtype=np.int64)
    if items:
        out[length - len(items):] = items
    return out


def sample_negatives(
    excluded: frozenset[int] | set[int],
    m_neg: int,
    num_items: int,
    rng: np.random.Generator,
    user=None,
) -> np.ndarray:
    """Draw ``m_neg`` distinct items uniformly from {1..num_items} minus ``excluded``."""
    pool = num_items - len(excluded)
    if m_neg > pool:
        who = f"user {user}: " if user is not None else ""
        raise ConfigError(
            f"{who}cannot draw {m_neg} negatives from {pool} unconsumed items"
        )
    if num_items <= 2048 or pool <= 4 * m_neg:
        candidates = np.array(
            [i for i in range(1, num_items + 1) if i not in excluded], dtype=np.int64
        )
        return rng.choice(candidates, size=m_neg, replace=False)
    chosen: list[int] = []
    seen = set(excluded)
    while len(chosen) < m_neg:
        draws = rng.integers(1, num_items + 1, size=2 * (m_neg - len(chosen)) + 16)
        for d in draws:
            d = int(d)
            if d not in seen:
                seen.add(d)
                chosen.append(d)
                if len(chosen) == m_neg:
                    break
    return np.asarray(chosen, dtype=np.int64)


def _negatives_for_slots(
    slot_users: list[UserSplit],
    m_neg: int,
    num_items: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Distinct uniform negatives for many (user, slot) pairs at once.

    Vectorized rejection when the unconsumed pools are large relative to the
    catalog; exact complement sampling per slot otherwise, so tiny synthetic
    catalogs cannot spin the rejection loop.
    """
    n_slots = len(slot_users)
    out = np.zeros((n_slots, m_neg), dtype=np.int64)
    if n_slots == 0:
        return out
    pools = [u.train_pool for u in slot_users]
    pool_sizes = [num_items - len(p) for p in pools]
    worst = int(np.argmin(pool_sizes))
    if m_neg > pool_sizes[worst]:
        raise ConfigError(
            f"user {slot_users[worst].user}: cannot draw {m_neg} negatives "
            f"from {pool_sizes[worst]} unconsumed items"
        )
    if (min(pool_sizes) - m_neg + 1) < 0.25 * num_items:
        for i, u in enumerate(slot_users):
            out[i] = sample_negatives(u.train_pool, m_neg, num_items, rng, user=u.user)
        return out

    uniq: dict[int, int] = {}
    rows = np.empty(n_slots, dtype=np.int64)
    for i, u in enumerate(slot_users):
        rows[i] = uniq.setdefault(u.user, len(uniq))
    excluded = np.zeros((len(uniq), num_items + 1), dtype=bool)
    for i, u in enumerate(slot_users):
        r = rows[i]
        if not excluded[r, 0]:
            excluded[r, 0] = True
            excluded[r, list(u.train_pool)] = True
    for col in range(m_neg):
        pending = np.arange(n_slots)
        while pending.size:
            draws = rng.integers(1, num_items + 1, size=pending.size)
            bad = excluded[rows[pending], draws]
            if col:
                bad |= (out[pending, :col] == draws[:, None]).any(axis=1)
            good = ~bad
            out[pending[good], col] = draws[good]
            pending = pending[bad]
    return out


@dataclass
class Batch:
    mode: str
    users: np.ndarray           # (B,)
    inputs: np.ndarray          # (B, Lb) left-padded windows
    pad_mask: np.ndarray        # (B, Lb) True at padding
    negatives: np.ndarray       # seq2seq (B, Lb, m); seq2item (B, m)
    targets: np.ndarray | None = None      # seq2seq (B, Lb), 0 where no target
    target_mask: np.ndarray | None = None  # seq2seq (B, Lb)
    target_item: np.ndarray | None = None  # seq2item (B,)

    @property
    def size(self) -> int:
        return len(self.users)


def make_batches(
    split: SplitDataset,
    length: int,
    batch_size: int,
    mode: str,
    m_neg: int,
    rng: np.random.Generator,
    shuffle_rng: np.random.Generator | None = None,
) -> list[Batch]:
    """Build one epoch of training batches.

    ``rng`` drives negative sampling; ``shuffle_rng`` (optional) drives example
    order. With shuffling on, examples are length-bucketed after the shuffle so
    that batches are length-homogeneous; bucketing only reorders examples, the
    window content is always the most recent ``length`` items left-padded to
    exactly ``length``.
    """
    if mode not in ("seq2seq", "seq2item"):
        raise ConfigError(f"unknown batch mode {mode!r}")
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")

    examples: list[tuple[UserSplit, tuple[int, ...], int | None]] = []
    for u in split.users:
        seq = u.train
        if len(seq) < 2:
            continue
        if mode == "seq2seq":
            examples.append((u, seq[-length:], None))
        else:
            for i in range(1, len(seq)):
                examples.append((u, seq[max(0, i - length): i], seq[i]))

    order = list(range(len(examples)))
    if shuffle_rng is not None:
        order = list(shuffle_rng.permutation(len(examples)))
        order.sort(key=lambda i: len(examples[i][1]))  # stable: keeps shuffle within a length

    groups = [order[i: i + batch_size] for i in range(0, len(order), batch_size)]
    if shuffle_rng is not None and len(groups) > 1:
        groups = [groups[i] for i in shuffle_rng.permutation(len(groups))]

    batches = []
    for group in groups:
        width = length
        rows = [examples[i] for i in group]
        inputs = np.stack([pad_window(seq, width) for _, seq, _ in rows])
        users = np.array([u.user for u, _, _ in rows], dtype=np.int64)
        pad = inputs == PAD_ID
        if mode == "seq2seq":
            targets = np.zeros_like(inputs)
            targets[:, :-1] = inputs[:, 1:]
            targets[pad] = 0
            slot_r, slot_t = (~pad).nonzero()
            flat = _negatives_for_slots(
                [rows[r][0] for r in slot_r], m_neg, split.num_items, rng
            )
            negatives = np.zeros((len(rows), width, m_neg), dtype=np.int64)
            negatives[slot_r, slot_t] = flat
            batches.append(
                Batch(
                    mode=mode,
                    users=users,
                    inputs=inputs,
                    pad_mask=pad,
                    negatives=negatives,
                    targets=targets,
                    target_mask=targets != 0,
                )
            )
        else:
            target_item = np.array([t for _, _, t in rows], dtype=np.int64)
            negatives = _negatives_for_slots(
                [u for u, _, _ in rows], m_neg, split.num_items, rng
            )
            batches.append(
                Batch(
                    mode=mode,
                    users=users,
                    inputs=inputs,
                    pad_mask=pad,
                    negatives=negatives,
                    target_item=target_item,
                )
            )
    return batches
