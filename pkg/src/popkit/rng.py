"""Counter-based random streams keyed on (seed, iteration, block, round).

Each stream is a fresh Philox generator whose 256-bit counter encodes the
coordinates, so a draw depends only on where it sits in the sampler and not
on the order in which work was executed. Word 0 of the counter is left at
zero as the in-stream position, which keeps distinct streams disjoint.
"""

from __future__ import annotations

import threading

import numpy as np

MASK64 = (1 << 64) - 1


def substream(seed, iteration=0, block=0, round_=0) -> np.random.Generator:
    key = np.array([int(seed) & MASK64, 0], dtype=np.uint64)
    counter = np.array([0, round_, block, iteration], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


_local = threading.local()


def _reset_round(seed, iteration, block, round_):
    """Per-thread generator re-pointed at a substream; valid until the next call."""
    cached = getattr(_local, "gen", None)
    if cached is None:
        bg = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
        cached = _local.gen = (bg, np.random.Generator(bg), bg.state["buffer"])
    bg, gen, buffer = cached
    bg.state = {
        "bit_generator": "Philox",
        "state": {"counter": np.array([0, round_, block, iteration], dtype=np.uint64),
                  "key": np.array([int(seed) & MASK64, 0], dtype=np.uint64)},
        "buffer": buffer, "buffer_pos": 4, "has_uint32": 0, "uinteger": 0,
    }
    return gen


class PatientStream:
    """Generator-like view that hands each patient its own slot of a shared round.

    Every call to :meth:`standard_normal` or :meth:`random` opens the next
    round ``r`` as ``substream(seed, iteration, block, r)``, draws one value
    per patient in the full dataset and returns the entries for ``patients``.
    A patient therefore receives the same numbers whether it is updated
    alone, in a chunk, or together with everyone else.
    """

    def __init__(self, seed, iteration, block, n_total, patients=None):
        self.seed = seed
        self.iteration = iteration
        self.block = block
        self.n_total = n_total
        self.patients = np.arange(n_total) if patients is None else np.asarray(patients)
        self.round = 0

    def _next(self):
        g = _reset_round(self.seed, self.iteration, self.block, self.round)
        self.round += 1
        return g

    def _check(self, size):
        if size is not None and tuple(np.atleast_1d(size)) != self.patients.shape:
            raise ValueError(f"size {size} does not match {self.patients.shape[0]} patients")

    def standard_normal(self, size=None):
        self._check(size)
        return self._next().standard_normal(self.n_total)[self.patients]

    def random(self, size=None):
        self._check(size)
        return self._next().random(self.n_total)[self.patients]
