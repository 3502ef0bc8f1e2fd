"""Synthetic datasets shared across test modules.

``random_split`` gives arbitrary well-formed data; ``successor_split`` embeds a
learnable rule (item i is followed by i+1 mod m) so trained models can beat a
random scorer by a wide margin. The realized vocabulary can be smaller than
the requested catalog, so callers should read ``split.num_items``.
"""

from __future__ import annotations

import numpy as np

from seqbench.data import Interaction, build_sequences, five_core_filter, leave_one_out_split


def _to_split(events, min_count=1):
    if min_count > 1:
        events = five_core_filter(events, min_count)
    item_vocab, user_vocab, seqs = build_sequences(events)
    return leave_one_out_split(seqs, len(item_vocab), item_vocab, user_vocab)


def random_split(num_users=12, num_items=30, min_len=5, max_len=12, seed=0):
    rng = np.random.default_rng(seed)
    events = []
    t = 0
    for u in range(num_users):
        length = int(rng.integers(min_len, max_len + 1))
        for i in rng.integers(0, num_items, size=length):
            events.append(Interaction(f"u{u}", f"i{int(i)}", 1.0, t))
            t += 1
    return _to_split(events)


def successor_split(num_users=40, num_items=25, length=10, seed=0):
    rng = np.random.default_rng(seed)
    events = []
    t = 0
    for u in range(num_users):
        start = int(rng.integers(0, num_items))
        for step in range(length):
            item = (start + step) % num_items
            events.append(Interaction(f"u{u}", f"i{item}", 1.0, t))
            t += 1
    return _to_split(events)
