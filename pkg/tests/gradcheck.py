"""Central-difference gradient oracle and the core-op check suite.

The oracle never touches the tape: it re-runs the forward pass with perturbed
inputs, so it is an independent check of every closed-form backward rule.
"""

from __future__ import annotations

import numpy as np

from seqbench import tensor as T


def numeric_grad(f, arrays, which, h=1e-5):
    """d f(arrays) / d arrays[which] by central differences, elementwise."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[which]
    out = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    for _ in it:
        ix = it.multi_index
        orig = target[ix]
        target[ix] = orig + h
        hi = f(base)
        target[ix] = orig - h
        lo = f(base)
        target[ix] = orig
        out[ix] = (hi - lo) / (2.0 * h)
    return out


def max_rel_err(analytic, numeric):
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_op(build, arrays, wrt, seed, h=1e-5, grad_filter=None):
    """Worst relative error of taped grads vs the oracle for one op call.

    ``build(tensors) -> Tensor`` runs the op; the readout is a fixed random
    weighted sum so every output element influences the scalar loss.
    ``grad_filter`` maps an input index to a view excluding entries the op
    freezes by contract (the padding embedding row).
    """
    rng = np.random.default_rng(seed)
    probe_out = build([T.Tensor(a) for a in arrays])
    w = rng.standard_normal(probe_out.shape) if probe_out.ndim else rng.standard_normal()

    def scalar(arrs):
        out = build([T.Tensor(a) for a in arrs])
        return float((out.data * w).sum())

    tensors = [T.Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    with T.GradientTape() as tape:
        out = build(tensors)
        loss = T.tensor_sum(T.mul(out, T.Tensor(w)))
    tape.backward(loss)

    worst = 0.0
    for i in wrt:
        analytic = tensors[i].grad
        num = numeric_grad(scalar, arrays, i, h=h)
        if grad_filter and i in grad_filter:
            analytic = grad_filter[i](analytic)
            num = grad_filter[i](num)
        worst = max(worst, max_rel_err(analytic, num))
    return worst


def core_op_suite(seed=20240):
    """Yield (op name, case label, rel err) for the six core ops.

    Covers at least 20 distinct shape configurations; every case must come in
    under the 1e-4 relative-error bar with step 1e-5.
    """
    rng = np.random.default_rng(seed)
    cases = []

    def rand(*shape):
        return rng.standard_normal(shape)

    # matmul: plain, rectangular, broadcast-batched, vector-like
    for label, a, b in [
        ("2x3@3x4", rand(2, 3), rand(3, 4)),
        ("7x2@2x2", rand(7, 2), rand(2, 2)),
        ("1x6@6x1", rand(1, 6), rand(6, 1)),
        ("batched 5x1x4x3@3x2", rand(5, 1, 4, 3), rand(3, 2)),
        ("batched 2x3x4@2x4x2", rand(2, 3, 4), rand(2, 4, 2)),
    ]:
        cases.append(
            ("matmul", label, check_op(lambda ts: T.matmul(ts[0], ts[1]), [a, b], [0, 1], seed))
        )

    # embedding_lookup: pad id present, repeated ids, higher-rank id arrays
    for label, rows, d, ids in [
        ("11x4 ids(3,5)", 11, 4, rng.integers(0, 11, size=(3, 5))),
        ("6x3 ids(4,)", 6, 3, np.array([0, 2, 2, 5])),
        ("9x2 ids(2,2,2)", 9, 2, rng.integers(0, 9, size=(2, 2, 2))),
    ]:
        table = rand(rows, d)
        # row 0 is frozen by contract, so the oracle compares rows 1.. only
        cases.append(
            (
                "embedding_lookup",
                label,
                check_op(
                    lambda ts, i=ids: T.embedding_lookup(ts[0], i),
                    [table],
                    [0],
                    seed,
                    grad_filter={0: lambda g: g[1:]},
                ),
            )
        )

    # layer_norm: grads wrt x, gain, and bias together
    for label, shape in [("4x6", (4, 6)), ("2x3x5", (2, 3, 5)), ("1x8", (1, 8))]:
        x = rand(*shape)
        gain = rand(shape[-1]) * 0.5 + 1.0
        bias = rand(shape[-1]) * 0.1
        cases.append(
            (
                "layer_norm",
                label,
                check_op(
                    lambda ts: T.layer_norm(ts[0], ts[1], ts[2]),
                    [x, gain, bias],
                    [0, 1, 2],
                    seed,
                ),
            )
        )

    # gru_cell: single vector and batched, grads wrt all six operands
    for label, batch, d_in, d_h in [
        ("vec d_in4 d_h3", None, 4, 3),
        ("batch5 d_in3 d_h3", 5, 3, 3),
        ("batch2 d_in2 d_h5", 2, 2, 5),
    ]:
        x = rand(d_in) if batch is None else rand(batch, d_in)
        h = rand(d_h) if batch is None else rand(batch, d_h)
        w_ih = rand(3 * d_h, d_in)
        w_hh = rand(3 * d_h, d_h)
        b_ih = rand(3 * d_h)
        b_hh = rand(3 * d_h)
        cases.append(
            (
                "gru_cell",
                label,
                check_op(
                    lambda ts: T.gru_cell(*ts),
                    [x, h, w_ih, w_hh, b_ih, b_hh],
                    [0, 1, 2, 3, 4, 5],
                    seed,
                ),
            )
        )

    # scaled_dot_attention: causal, padded multi-head, single-position
    causal4 = np.tril(np.ones((4, 4), dtype=bool))
    pad_mask = np.ones((2, 1, 3, 3), dtype=bool)
    pad_mask[1, :, :, 0] = False
    for label, q, k, v, m in [
        ("causal L4 d3", rand(4, 3), rand(4, 3), rand(4, 2), causal4),
        ("heads 2x2xL3", rand(2, 2, 3, 2), rand(2, 2, 3, 2), rand(2, 2, 3, 2), pad_mask),
        ("L1", rand(1, 5), rand(1, 5), rand(1, 5), np.ones((1, 1), dtype=bool)),
    ]:
        cases.append(
            (
                "scaled_dot_attention",
                label,
                check_op(
                    lambda ts, mm=m: T.scaled_dot_attention(ts[0], ts[1], ts[2], mm),
                    [q, k, v],
                    [0, 1, 2],
                    seed,
                ),
            )
        )

    # bce_with_logits: plain, weighted with excluded terms, single element
    y6 = np.array([1.0, 0.0, 1.0, 1.0, 0.0, 0.0])
    y34 = rng.integers(0, 2, size=(3, 4)).astype(float)
    w34 = rng.integers(0, 2, size=(3, 4)).astype(float)
    w34.flat[0] = 1.0  # keep at least one term in the mean
    for label, logits, y, w in [
        ("len6", rand(6), y6, None),
        ("3x4 weighted", rand(3, 4), y34, w34),
        ("single", rand(1), np.array([1.0]), None),
    ]:
        cases.append(
            (
                "bce_with_logits",
                label,
                check_op(
                    lambda ts, yy=y, ww=w: T.bce_with_logits(ts[0], yy, ww),
                    [logits],
                    [0],
                    seed,
                ),
            )
        )

    return cases
