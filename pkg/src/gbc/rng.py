"""Counter-based random streams.

Everything stochastic in the package draws from an :class:`RngStream`, a thin
wrapper over numpy's Philox generator keyed by ``(seed, stream_id)``. Philox
is counter-based: the key fully determines the sequence, so the same
(seed, stream_id) pair always reproduces the same draws, and distinct pairs
give statistically independent streams. That is what lets reference-table
generation fan out over worker threads and still produce byte-identical
files regardless of thread count.

Child streams are derived by mixing a label into the parent's stream id with
splitmix64, so a tree of streams can be rebuilt from the root seed alone.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 mixing step (Steele, Lea & Flood constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK64
    if isinstance(label, str):
        # Stable across runs and platforms (unlike hash()).
        acc = 0
        for byte in label.encode("utf-8"):
            acc = splitmix64(acc ^ byte)
        return acc
    raise TypeError(f"stream label must be int or str, got {type(label).__name__}")


class RngStream:
    """An independent, reproducible random stream.

    Parameters
    ----------
    seed : int
        Root seed of the run. All streams of one run share it.
    stream_id : int
        Distinguishes this stream from its siblings.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self) -> np.random.Generator:
        """The underlying numpy Generator (stateful: draws advance it)."""
        return self._gen

    def child(self, label) -> "RngStream":
        """Derive an independent stream from an int or string label.

        Deterministic: the same (seed, stream_id, label) triple always
        yields the same child. Children never share the parent's counter,
        so interleaving draws on parent and child is safe.
        """
        mixed = splitmix64(self.stream_id ^ splitmix64(_label_to_int(label)))
        return RngStream(self.seed, mixed)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
