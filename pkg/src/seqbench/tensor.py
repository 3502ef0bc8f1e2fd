"""Dense float64 tensors with taped reverse-mode automatic differentiation.

A ``GradientTape`` records every op applied to tracked tensors while it is
active; ``backward(loss)`` replays the tape in reverse and deposits ``.grad``
arrays (plain numpy) on every tensor created with ``requires_grad=True``.
Everything is float64 end to end; there is no implicit dtype promotion.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_TAPES: list["GradientTape"] = []


class Tensor:
    """A numpy array plus the bookkeeping needed to reach it from a loss."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: int | None = None
        self._tape: GradientTape | None = None
        if self.requires_grad and _TAPES:
            _TAPES[-1]._watch(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _coerce(other))


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class GradientTape:
    """Ordered op record; reverse replay is topological by construction."""

    def __init__(self):
        self._entries: list[tuple[tuple[int | None, ...], int, tuple]] = []
        self._tensors: dict[int, Tensor] = {}
        self._next = 0

    def __enter__(self) -> "GradientTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPES.pop()
        assert popped is self

    def _watch(self, t: Tensor) -> int:
        if t._tape is not self:
            t._tape = self
            t._node = self._next
            self._tensors[self._next] = t
            self._next += 1
        return t._node

    def _tracked(self, t: Tensor) -> bool:
        return t.requires_grad or t._tape is self

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], grad_fns: tuple) -> None:
        in_ids = tuple(
            self._watch(t) if self._tracked(t) else None for t in inputs
        )
        out._tape = self
        out._node = self._next
        self._tensors[self._next] = out
        self._next += 1
        self._entries.append((in_ids, out._node, grad_fns))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) for every requires_grad tensor on this tape."""
        if loss._tape is not self:
            raise ValueError("loss tensor was not computed under this tape")
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss._node: np.ones_like(loss.data)}
        for in_ids, out_id, grad_fns in reversed(self._entries):
            g = grads.get(out_id)
            if g is None:
                continue
            for node, fn in zip(in_ids, grad_fns):
                if node is None or fn is None:
                    continue
                contrib = fn(g)
                prev = grads.get(node)
                grads[node] = contrib if prev is None else prev + contrib
        for node, t in self._tensors.items():
            if t.requires_grad:
                g = grads.get(node)
                t.grad = np.zeros_like(t.data) if g is None else np.ascontiguousarray(g)
                if t.grad.shape != t.data.shape:
                    raise ShapeError(
                        f"gradient shape {t.grad.shape} != tensor shape {t.data.shape}"
                    )


def backward(loss: Tensor) -> None:
    if loss._tape is None:
        raise ValueError("loss tensor is not attached to any tape")
    loss._tape.backward(loss)


def _active() -> GradientTape | None:
    return _TAPES[-1] if _TAPES else None


def _emit(out_data, inputs: tuple[Tensor, ...], grad_fns: tuple) -> Tensor:
    out = Tensor(out_data)
    tape = _active()
    if tape is not None and any(tape._tracked(t) for t in inputs):
        tape._record(out, inputs, grad_fns)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise and structural ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    return _emit(
        a.data + b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    return _emit(
        a.data - b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    return _emit(
        a.data * b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.shape),
            lambda g: _unbroadcast(g * a.data, b.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    return _emit(
        a.data / b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.data, a.shape),
            lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), (lambda g: -g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")

    def swap(x):
        return np.swapaxes(x, -1, -2)

    return _emit(
        a.data @ b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g @ swap(b.data), a.shape),
            lambda g: _unbroadcast(swap(a.data) @ g, b.shape),
        ),
    )


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def grad(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.shape).copy()

    return _emit(a.data.sum(axis=axis, keepdims=keepdims), (a,), (grad,))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]

    def grad(g):
        if axis is None:
            return np.broadcast_to(g, a.shape) / count
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.shape) / count

    return _emit(a.data.mean(axis=axis, keepdims=keepdims), (a,), (grad,))


def reshape(a: Tensor, shape) -> Tensor:
    return _emit(a.data.reshape(shape), (a,), (lambda g: g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _emit(
        np.transpose(a.data, axes),
        (a,),
        (lambda g: np.transpose(g, inv),),
    )


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ValueError("concat of zero tensors")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_grad(i):
        def grad(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(index)]

        return grad

    return _emit(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        tuple(make_grad(i) for i in range(len(tensors))),
    )


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def grad(g):
        out = np.zeros_like(a.data)
        out[index] = g
        return out

    return _emit(a.data[index].copy(), (a,), (grad,))


def take_rows(a: Tensor, idx) -> Tensor:
    """Select rows of a 2-d tensor; gradient scatter-adds back."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-d tensor, got {a.shape}")

    def grad(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return out

    return _emit(a.data[idx], (a,), (grad,))


# ---------------------------------------------------------------------------
# nonlinearities

def _sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form stays finite for |x| up to the float64 range
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _emit(s, (a,), (lambda g: g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _emit(t, (a,), (lambda g: g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), (lambda g: g * mask,))


def sqrt(a: Tensor) -> Tensor:
    s = np.sqrt(a.data)
    return _emit(s, (a,), (lambda g: g * 0.5 / s,))


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0. Caller gates on train vs eval."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _emit(a.data * keep, (a,), (lambda g: g * keep,))


# ---------------------------------------------------------------------------
# model-level ops

def embedding_lookup(table: Tensor, ids, pad_id: int | None = 0) -> Tensor:
    """Gather rows of ``table`` for integer ``ids`` (any shape).

    Row ``pad_id`` is frozen: its gradient is zeroed so optimizers never move
    the padding embedding. ``pad_id=None`` freezes nothing (positional tables).
    """
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-d, got {table.shape}")
    rows = table.shape[0]
    if ids.size:
        bad = ids[(ids < 0) | (ids >= rows)]
        if bad.size:
            raise IndexError(
                f"item id {int(bad.flat[0])} outside embedding table with {rows} rows"
            )

    def grad(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        if pad_id is not None:
            out[pad_id] = 0.0
        return out

    return _emit(table.data[ids], (table,), (grad,))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({x.shape[-1]},), "
            f"got {gain.shape} and {bias.shape}"
        )
    mu = mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = sqrt(add(var, Tensor(eps)))
    return add(mul(div(centered, inv), gain), bias)


def masked_softmax(x: Tensor, mask) -> Tensor:
    """Softmax over the last axis; masked-out entries get exactly zero weight."""
    maskb = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not maskb.any(axis=-1).all():
        raise ValueError("masked_softmax: some row has every entry masked out")
    logits = np.where(maskb, x.data, -np.inf)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        return s * (g - (g * s).sum(axis=-1, keepdims=True))

    return _emit(s, (x,), (grad,))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask) -> Tensor:
    """Attention over the last two axes: softmax(q k^T / sqrt(d)) v.

    ``mask`` is boolean, True where attention is allowed, broadcastable to the
    (..., L_q, L_k) score shape. Every query must be allowed at least one key.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: q dim {q.shape} vs k dim {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: k length {k.shape} vs v length {v.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = mul(matmul(q, transpose(k, _swap_axes(k.ndim))), Tensor(scale))
    weights = masked_softmax(scores, mask)
    return matmul(weights, v)


def _swap_axes(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def gru_cell(
    x: Tensor,
    h: Tensor,
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
) -> Tensor:
    """One GRU step. Gate order in the stacked weights is reset, update, new.

    h' = (1 - z) * n + z * h with
    r = sigmoid(W_r x + b_ir + U_r h + b_hr)
    z = sigmoid(W_z x + b_iz + U_z h + b_hz)
    n = tanh(W_n x + b_in + r * (U_n h + b_hn))
    Accepts single vectors or batched (B, d) inputs.
    """
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, -1))
        h = reshape(h, (1, -1))
    d_h = h.shape[-1]
    d_in = x.shape[-1]
    if w_ih.shape != (3 * d_h, d_in):
        raise ShapeError(f"w_ih must be {(3 * d_h, d_in)}, got {w_ih.shape}")
    if w_hh.shape != (3 * d_h, d_h):
        raise ShapeError(f"w_hh must be {(3 * d_h, d_h)}, got {w_hh.shape}")
    if b_ih.shape != (3 * d_h,) or b_hh.shape != (3 * d_h,):
        raise ShapeError(f"gru biases must have shape ({3 * d_h},)")
    gi = add(matmul(x, transpose(w_ih)), b_ih)
    gh = add(matmul(h, transpose(w_hh)), b_hh)
    r = sigmoid(add(narrow(gi, -1, 0, d_h), narrow(gh, -1, 0, d_h)))
    z = sigmoid(add(narrow(gi, -1, d_h, d_h), narrow(gh, -1, d_h, d_h)))
    n = tanh(add(narrow(gi, -1, 2 * d_h, d_h), mul(r, narrow(gh, -1, 2 * d_h, d_h))))
    out = add(mul(sub(Tensor(1.0), z), n), mul(z, h))
    return reshape(out, (d_h,)) if single else out


def bce_with_logits(logits: Tensor, labels, weights=None) -> Tensor:
    """Mean binary cross-entropy against raw logits, numerically stable.

    ``weights`` (0/1 or general nonnegative) both scales each term and shrinks
    the denominator, so excluded terms do not dilute the mean.
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"labels shape {y.shape} != logits shape {logits.shape}")
    if logits.size == 0:
        raise ValueError("bce_with_logits on an empty batch")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    x = logits.data
    per_term = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    if weights is None:
        denom = float(logits.size)
        loss = per_term.sum() / denom
        w = None
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != logits.shape:
            raise ShapeError(f"weights shape {w.shape} != logits shape {logits.shape}")
        denom = float(w.sum())
        if denom <= 0.0:
            raise ValueError("bce_with_logits: weights sum to zero")
        loss = (per_term * w).sum() / denom

    def grad(g):
        coef = _sigmoid(x) - y
        if w is not None:
            coef = coef * w
        return g * coef / denom

    return _emit(np.float64(loss), (logits,), (grad,))
