"""Named RNG streams derived from (seed, stream-name).

Each stream seeds an independent generator, so adding a new stream (or drawing
more from one) never perturbs the others. Per-user substreams extend the same
scheme with the user id, making parallel evaluation schedule-independent.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("init", "shuffle", "negatives", "dropout", "eval-negatives")


def _tag(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), _tag(name)])


def user_rng(seed: int, name: str, user: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), _tag(name), int(user)])


def derive_seed(seed: int, *parts) -> int:
    """A child seed from (seed, parts); stable across runs and platforms."""
    entropy = [int(seed)] + [_tag(str(p)) for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
