"""Keyed random streams.

Every random quantity in a run is drawn from a Philox (counter-based)
generator keyed by ``(master seed, purpose tag, index)``.  Streams with
different keys are independent, and adding a new purpose never shifts the
draws of an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np

# Streams are consumed in fixed-size blocks so that the values seen at step t
# do not depend on how many runs are advanced together.
BLOCK = 1024


def _tag_word(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def seed_sequence(seed: int, tag: str, index: int = 0) -> np.random.SeedSequence:
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be nonnegative")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(_tag_word(tag), int(index)))


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Return an independent generator for ``(seed, tag, index)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, tag, index)))


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """Child master seed, e.g. one per Monte-Carlo trial."""
    words = seed_sequence(seed, tag, index).generate_state(2, dtype=np.uint32)
    return int(words[0]) << 31 | int(words[1]) >> 1


def distinct_rows(n: int, size: int, rng: np.random.Generator, rows: int) -> np.ndarray:
    """``rows`` independent uniform size-``size`` subsets of ``range(n)``.

    Small subsets of a large population are drawn by rejection (an ordered
    tuple with no repeats is uniform over subsets); dense ones fall back to
    per-row sampling without replacement.
    """
    if not 1 <= size <= n:
        raise ValueError(f"need 1 <= size <= n, got size={size}, n={n}")
    if size * size > 4 * n:
        return np.stack([rng.choice(n, size=size, replace=False) for _ in range(rows)])
    out = rng.integers(0, n, size=(rows, size))
    pending = np.arange(rows)
    while True:
        block = np.sort(out[pending], axis=1)
        dup = (block[:, 1:] == block[:, :-1]).any(axis=1)
        pending = pending[dup]
        if pending.size == 0:
            return out
        out[pending] = rng.integers(0, n, size=(pending.size, size))


class BlockSource:
    """Hands out one row at a time from blocks drawn off a generator."""

    def __init__(self, draw):
        self._draw = draw
        self._block = None
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._block is None or self._pos == len(self._block):
            self._block = self._draw(BLOCK)
            self._pos = 0
        row = self._block[self._pos]
        self._pos += 1
        return row


def gaussian_source(seed: int, dim: int, tag: str = "gauss", index: int = 0) -> BlockSource:
    gen = stream(seed, tag, index)
    return BlockSource(lambda k: gen.standard_normal((k, dim)))


def batch_source(seed: int, n: int, size: int, tag: str = "batch", index: int = 0) -> BlockSource:
    gen = stream(seed, tag, index)
    return BlockSource(lambda k: distinct_rows(n, size, gen, k))
