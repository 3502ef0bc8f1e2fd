"""Five sequential recommenders behind one contract.

Every family consumes a left-padded item window and produces one d-dimensional
representation per prediction slot; candidates are always scored by dot product
with the shared item-embedding table. Sequence-to-sequence families (gru4rec,
sasrec, bert4rec) emit a slot per input position; sequence-to-item families
(narm, core) emit a single slot for the next item after the window.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .data import PAD_ID, Batch
from .errors import ConfigError, ShapeError
from .rng import stream_rng
from .tensor import Tensor

FAMILY_MODES = {
    "gru4rec": "seq2seq",
    "sasrec": "seq2seq",
    "bert4rec": "seq2seq",
    "narm": "seq2item",
    "core": "seq2item",
}
FAMILIES = tuple(FAMILY_MODES)
ATTENTION_FAMILIES = ("sasrec", "bert4rec")


@dataclass
class ModelConfig:
    family: str
    d: int
    L: int
    layers: int = 2
    heads: int = 2
    dropout: float = 0.2
    mask_prob: float = 0.2

    def validate(self) -> None:
        if self.family not in FAMILY_MODES:
            raise ConfigError(f"unknown model family {self.family!r}, expected one of {FAMILIES}")
        if self.d < 1 or self.L < 1:
            raise ConfigError(f"d and L must be >= 1, got d={self.d}, L={self.L}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.family in ATTENTION_FAMILIES:
            if self.layers < 1:
                raise ConfigError(f"layers must be >= 1, got {self.layers}")
            if self.heads < 1 or self.d % self.heads != 0:
                raise ConfigError(
                    f"d={self.d} must be divisible by heads={self.heads} for {self.family}"
                )
        if self.family == "bert4rec" and not 0.0 < self.mask_prob < 1.0:
            raise ConfigError(f"mask_prob must be in (0, 1), got {self.mask_prob}")


@dataclass
class SlotBatch:
    """Training-forward output: one row per prediction slot."""

    reps: Tensor              # (S, d)
    positives: np.ndarray     # (S,)
    negatives: np.ndarray     # (S, m_neg)


def _trim_all_pad_columns(inputs: np.ndarray):
    """Drop leading columns that are padding in every row of the batch."""
    pad = inputs == PAD_ID
    keep = ~pad.all(axis=0)
    if not keep.any():
        return None
    start = int(keep.argmax())
    return inputs[:, start:], pad[:, start:], start


def _blend(mask_keep_old: np.ndarray, old: Tensor, new: Tensor) -> Tensor:
    keep = mask_keep_old.astype(np.float64)[:, None]
    return T.add(T.mul(new, Tensor(1.0 - keep)), T.mul(old, Tensor(keep)))


class Model:
    """Shared parameter store, init, and scoring; families override the forwards."""

    def __init__(self, config: ModelConfig, num_items: int, seed: int):
        config.validate()
        if num_items < 1:
            raise ConfigError(f"num_items must be >= 1, got {num_items}")
        self.config = config
        self.num_items = num_items
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self._rng = stream_rng(seed, "init")
        self._build()
        del self._rng

    # -- parameter construction -------------------------------------------

    def _embedding_rows(self) -> int:
        return self.num_items + 1

    def _build(self) -> None:
        d = self.config.d
        rows = self._embedding_rows()
        table = self._rng.uniform(-0.5 / d, 0.5 / d, size=(rows, d))
        table[PAD_ID] = 0.0
        self.params["item_emb"] = Tensor(table, requires_grad=True)
        self._build_family()

    def _build_family(self) -> None:
        raise NotImplementedError

    def _xavier(self, name: str, fan_in: int, fan_out: int, shape=None) -> None:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        shape = shape if shape is not None else (fan_in, fan_out)
        self.params[name] = Tensor(self._rng.uniform(-limit, limit, size=shape), requires_grad=True)

    def _zeros(self, name: str, *shape: int) -> None:
        self.params[name] = Tensor(np.zeros(shape), requires_grad=True)

    def _ones(self, name: str, *shape: int) -> None:
        self.params[name] = Tensor(np.ones(shape), requires_grad=True)

    def _gru_params(self, prefix: str, d_in: int, d_h: int) -> None:
        self._xavier(f"{prefix}.w_ih", d_in, 3 * d_h, shape=(3 * d_h, d_in))
        self._xavier(f"{prefix}.w_hh", d_h, 3 * d_h, shape=(3 * d_h, d_h))
        self._zeros(f"{prefix}.b_ih", 3 * d_h)
        self._zeros(f"{prefix}.b_hh", 3 * d_h)

    # -- shared pieces ------------------------------------------------------

    @property
    def family(self) -> str:
        return self.config.family

    @property
    def mode(self) -> str:
        return FAMILY_MODES[self.config.family]

    @property
    def embedding(self) -> Tensor:
        return self.params["item_emb"]

    def count_params(self) -> int:
        """Trainable scalars; the frozen pad row never trains, so it is excluded."""
        total = sum(p.size for p in self.params.values())
        return total - self.config.d

    def _dropout(self, x: Tensor, rng) -> Tensor:
        if rng is None or self.config.dropout == 0.0:
            return x
        return T.dropout(x, self.config.dropout, rng)

    def _gru_scan(self, emb: Tensor, pad: np.ndarray, prefix: str = "gru"):
        """Run the GRU over time; padding keeps the previous state untouched.

        Returns (stacked states (B, W, d), final state (B, d)).
        """
        b, w, d = emb.shape
        w_ih = self.params[f"{prefix}.w_ih"]
        w_hh = self.params[f"{prefix}.w_hh"]
        b_ih = self.params[f"{prefix}.b_ih"]
        b_hh = self.params[f"{prefix}.b_hh"]
        h = Tensor(np.zeros((b, d)))
        states = []
        for t in range(w):
            x_t = T.reshape(T.narrow(emb, 1, t, 1), (b, d))
            h_new = T.gru_cell(x_t, h, w_ih, w_hh, b_ih, b_hh)
            h = _blend(pad[:, t], h, h_new)
            states.append(T.reshape(h, (b, 1, d)))
        return T.concat(states, axis=1), h

    def _gather_slots(self, reps_all: Tensor, mask: np.ndarray) -> Tensor:
        b, w, d = reps_all.shape
        flat = T.reshape(reps_all, (b * w, d))
        idx = np.flatnonzero(mask.ravel())
        return T.take_rows(flat, idx)

    # -- family contract ----------------------------------------------------

    def training_slots(self, batch: Batch, rng) -> SlotBatch | None:
        """Forward pass with dropout; None when the batch yields zero slots."""
        if batch.mode != self.mode:
            raise ConfigError(
                f"{self.family} needs {self.mode} batches, got {batch.mode}"
            )
        trimmed = _trim_all_pad_columns(batch.inputs)
        if trimmed is None:
            return None
        w, pad, start = trimmed
        return self._slots(w, pad, batch, start, rng)

    def encode(self, windows: np.ndarray) -> Tensor:
        """One representation per row for next-item scoring; no dropout."""
        windows = np.asarray(windows, dtype=np.int64)
        if windows.ndim != 2:
            raise ShapeError(f"encode expects (B, W) windows, got {windows.shape}")
        trimmed = _trim_all_pad_columns(windows)
        if trimmed is None:
            raise ConfigError("encode on all-pad windows: no items to condition on")
        w, pad, _ = trimmed
        return self._encode(w, pad)

    def _slots(self, w, pad, batch, start, rng) -> SlotBatch | None:
        raise NotImplementedError

    def _encode(self, w, pad) -> Tensor:
        raise NotImplementedError

    # candidate embeddings are dropout-regularized at training time (core only)
    candidate_dropout = False


# ---------------------------------------------------------------------------
# GRU families

class GRU4Rec(Model):
    def _build_family(self) -> None:
        self._gru_params("gru", self.config.d, self.config.d)

    def _slots(self, w, pad, batch, start, rng) -> SlotBatch | None:
        mask = batch.target_mask[:, start:]
        if not mask.any():
            return None
        emb = self._dropout(T.embedding_lookup(self.embedding, w), rng)
        states, _ = self._gru_scan(emb, pad)
        reps = self._gather_slots(states, mask)
        return SlotBatch(
            reps,
            batch.targets[:, start:][mask],
            batch.negatives[:, start:][mask],
        )

    def _encode(self, w, pad) -> Tensor:
        emb = T.embedding_lookup(self.embedding, w)
        _, final = self._gru_scan(emb, pad)
        return final


class NARM(Model):
    def _build_family(self) -> None:
        d = self.config.d
        self._gru_params("gru", d, d)
        self._xavier("att.global", d, d)
        self._xavier("att.local", d, d)
        self._xavier("att.v", d, 1, shape=(d, 1))
        self._xavier("combine", 2 * d, d)

    def _hybrid_rep(self, emb: Tensor, pad: np.ndarray) -> Tensor:
        b, w, d = emb.shape
        states, final = self._gru_scan(emb, pad)
        # additive attention conditioned on the final state; no normalization
        query = T.reshape(T.matmul(final, self.params["att.global"]), (b, 1, d))
        keys = T.matmul(states, self.params["att.local"])
        energy = T.matmul(T.sigmoid(T.add(query, keys)), self.params["att.v"])
        real = (~pad).astype(np.float64)[:, :, None]
        weights = T.mul(energy, Tensor(real))
        local = T.tensor_sum(T.mul(weights, states), axis=1)
        return T.matmul(T.concat([final, local], axis=-1), self.params["combine"])

    def _slots(self, w, pad, batch, start, rng) -> SlotBatch | None:
        emb = self._dropout(T.embedding_lookup(self.embedding, w), rng)
        return SlotBatch(self._hybrid_rep(emb, pad), batch.target_item, batch.negatives)

    def _encode(self, w, pad) -> Tensor:
        return self._hybrid_rep(T.embedding_lookup(self.embedding, w), pad)


class CORE(Model):
    candidate_dropout = True

    def _build_family(self) -> None:
        d = self.config.d
        self._xavier("att.w", d, d)
        self._zeros("att.b", d)
        self._xavier("att.v", d, 1, shape=(d, 1))

    def _pooled_rep(self, emb: Tensor, pad: np.ndarray) -> Tensor:
        # z is a convex combination of item embeddings, so it stays in their space
        b, w, d = emb.shape
        hidden = T.tanh(T.add(T.matmul(emb, self.params["att.w"]), self.params["att.b"]))
        energy = T.reshape(T.matmul(hidden, self.params["att.v"]), (b, w))
        alpha = T.masked_softmax(energy, ~pad)
        return T.tensor_sum(T.mul(T.reshape(alpha, (b, w, 1)), emb), axis=1)

    def _slots(self, w, pad, batch, start, rng) -> SlotBatch | None:
        emb = self._dropout(T.embedding_lookup(self.embedding, w), rng)
        return SlotBatch(self._pooled_rep(emb, pad), batch.target_item, batch.negatives)

    def _encode(self, w, pad) -> Tensor:
        return self._pooled_rep(T.embedding_lookup(self.embedding, w), pad)


# ---------------------------------------------------------------------------
# transformer families

class _TransformerModel(Model):
    bidirectional = False

    def _build_family(self) -> None:
        d = self.config.d
        self.params["pos_emb"] = Tensor(
            self._rng.uniform(-0.5 / d, 0.5 / d, size=(self.config.L, d)),
            requires_grad=True,
        )
        for i in range(self.config.layers):
            p = f"blk{i}"
            self._ones(f"{p}.ln1.g", d)
            self._zeros(f"{p}.ln1.b", d)
            for proj in ("q", "k", "v", "o"):
                self._xavier(f"{p}.w{proj}", d, d)
                self._zeros(f"{p}.b{proj}", d)
            self._ones(f"{p}.ln2.g", d)
            self._zeros(f"{p}.ln2.b", d)
            self._xavier(f"{p}.ff1.w", d, 4 * d)
            self._zeros(f"{p}.ff1.b", 4 * d)
            self._xavier(f"{p}.ff2.w", 4 * d, d)
            self._zeros(f"{p}.ff2.b", d)
        self._ones("ln_f.g", d)
        self._zeros("ln_f.b", d)

    def _positions(self, width: int) -> np.ndarray:
        # right-aligned: index counts back from the window end, clipped to the table
        dist = np.arange(width - 1, -1, -1)
        return np.minimum(dist, self.config.L - 1)

    def _attention_mask(self, pad: np.ndarray) -> np.ndarray:
        b, w = pad.shape
        key_ok = ~pad
        mask = np.broadcast_to(key_ok[:, None, None, :], (b, 1, w, w)).copy()
        if not self.bidirectional:
            mask &= np.tril(np.ones((w, w), dtype=bool))
        idx = np.arange(w)
        mask[:, :, idx, idx] = True  # a pad query still needs one allowed key
        return mask

    def _heads_split(self, x: Tensor) -> Tensor:
        b, w, d = x.shape
        h = self.config.heads
        return T.transpose(T.reshape(x, (b, w, h, d // h)), (0, 2, 1, 3))

    def _heads_join(self, x: Tensor) -> Tensor:
        b, h, w, dh = x.shape
        return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, w, h * dh))

    def _stack(self, w: np.ndarray, pad: np.ndarray, rng) -> Tensor:
        b, width = w.shape
        emb = T.embedding_lookup(self.embedding, w)
        pos = T.embedding_lookup(self.params["pos_emb"], self._positions(width), pad_id=None)
        x = self._dropout(T.add(emb, pos), rng)
        mask = self._attention_mask(pad)
        for i in range(self.config.layers):
            p = f"blk{i}"
            a = T.layer_norm(x, self.params[f"{p}.ln1.g"], self.params[f"{p}.ln1.b"])
            q = self._heads_split(T.add(T.matmul(a, self.params[f"{p}.wq"]), self.params[f"{p}.bq"]))
            k = self._heads_split(T.add(T.matmul(a, self.params[f"{p}.wk"]), self.params[f"{p}.bk"]))
            v = self._heads_split(T.add(T.matmul(a, self.params[f"{p}.wv"]), self.params[f"{p}.bv"]))
            att = self._heads_join(T.scaled_dot_attention(q, k, v, mask))
            att = T.add(T.matmul(att, self.params[f"{p}.wo"]), self.params[f"{p}.bo"])
            x = T.add(x, self._dropout(att, rng))
            f = T.layer_norm(x, self.params[f"{p}.ln2.g"], self.params[f"{p}.ln2.b"])
            ff = T.add(T.matmul(f, self.params[f"{p}.ff1.w"]), self.params[f"{p}.ff1.b"])
            ff = T.add(T.matmul(T.relu(ff), self.params[f"{p}.ff2.w"]), self.params[f"{p}.ff2.b"])
            x = T.add(x, self._dropout(ff, rng))
        return T.layer_norm(x, self.params["ln_f.g"], self.params["ln_f.b"])


class SASRec(_TransformerModel):
    bidirectional = False

    def _slots(self, w, pad, batch, start, rng) -> SlotBatch | None:
        mask = batch.target_mask[:, start:]
        if not mask.any():
            return None
        reps = self._gather_slots(self._stack(w, pad, rng), mask)
        return SlotBatch(
            reps,
            batch.targets[:, start:][mask],
            batch.negatives[:, start:][mask],
        )

    def _encode(self, w, pad) -> Tensor:
        out = self._stack(w, pad, None)
        b, width, d = out.shape
        return T.reshape(T.narrow(out, 1, width - 1, 1), (b, d))


class BERT4Rec(_TransformerModel):
    bidirectional = True

    def _embedding_rows(self) -> int:
        # one extra trainable row for the Cloze mask token
        return self.num_items + 2

    @property
    def mask_token(self) -> int:
        return self.num_items + 1

    def _slots(self, w, pad, batch, start, rng) -> SlotBatch | None:
        if rng is None:
            raise ConfigError("bert4rec training requires the dropout stream for Cloze draws")
        cloze = (rng.random(w.shape) < self.config.mask_prob) & ~pad
        none_masked = ~cloze.any(axis=1)
        cloze[none_masked, -1] = True  # right-aligned windows end on a real item
        masked = np.where(cloze, self.mask_token, w)
        reps = self._gather_slots(self._stack(masked, pad, rng), cloze)
        return SlotBatch(reps, w[cloze], batch.negatives[:, start:][cloze])

    def _encode(self, w, pad) -> Tensor:
        b, width = w.shape
        grown = min(width + 1, self.config.L)
        queried = np.zeros((b, grown), dtype=np.int64)
        for r in range(b):
            items = w[r][w[r] != PAD_ID]
            seq = np.append(items[-(grown - 1):] if grown > 1 else items[:0], self.mask_token)
            queried[r, grown - len(seq):] = seq
        out = self._stack(queried, queried == PAD_ID, None)
        return T.reshape(T.narrow(out, 1, grown - 1, 1), (b, self.config.d))


_FAMILY_CLASSES = {
    "gru4rec": GRU4Rec,
    "narm": NARM,
    "sasrec": SASRec,
    "bert4rec": BERT4Rec,
    "core": CORE,
}


def build_model(config: ModelConfig, num_items: int, seed: int) -> Model:
    config.validate()
    return _FAMILY_CLASSES[config.family](config, num_items, seed)


# ---------------------------------------------------------------------------
# scoring

def slot_logits(model: Model, slots: SlotBatch, rng=None) -> Tensor:
    """Scores for [positive | negatives] per slot: (S, 1 + m_neg)."""
    cand = np.concatenate([slots.positives[:, None], slots.negatives], axis=1)
    emb = T.embedding_lookup(model.embedding, cand)
    if model.candidate_dropout and rng is not None:
        emb = model._dropout(emb, rng)
    s, d = slots.reps.shape
    return T.tensor_sum(T.mul(emb, T.reshape(slots.reps, (s, 1, d))), axis=-1)


def score(model: Model, z, candidates) -> np.ndarray:
    """Dot-product scores of candidate items against one representation."""
    cand = np.asarray(candidates, dtype=np.int64)
    if cand.size == 0:
        return np.zeros(0)
    if cand.min() < 1 or cand.max() > model.num_items:
        bad = cand[(cand < 1) | (cand > model.num_items)].flat[0]
        raise ValueError(
            f"candidate id {int(bad)} invalid: candidates must be real items in 1..{model.num_items}"
        )
    zv = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    return model.embedding.data[cand] @ zv


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"SBCK"
_VERSION = 1


def save_checkpoint(model: Model, path: str, epoch: int = 0, val_metric: float | None = None) -> None:
    """Versioned binary container + JSON sidecar next to it."""
    header = {
        "family": model.family,
        "config": asdict(model.config),
        "num_items": model.num_items,
        "seed": model.seed,
        "params": [[name, list(p.shape)] for name, p in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        for p in model.params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    sidecar = {
        "family": model.family,
        "d": model.config.d,
        "L": model.config.L,
        "seed": model.seed,
        "epoch": epoch,
        "val_metric": val_metric,
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> tuple[Model, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigError(f"{path} is not a seqbench checkpoint")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        model = build_model(
            ModelConfig(**header["config"]), header["num_items"], header["seed"]
        )
        for name, shape in header["params"]:
            n = int(np.prod(shape))
            buf = fh.read(8 * n)
            model.params[name].data[...] = np.frombuffer(buf, dtype="<f8").reshape(shape)
    sidecar = {}
    if os.path.exists(path + ".json"):
        with open(path + ".json", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    return model, sidecar
