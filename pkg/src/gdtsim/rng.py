"""Labelled random substreams derived from one master seed.

A substream for ``label`` is seeded with ``SeedSequence([seed, crc32(label)])``
so toggling one subsystem never shifts the draws seen by another.
"""

import zlib

import numpy as np

STREAM_LABELS = ("mobility", "channel", "swipe", "content", "exploration", "init")


def derive_seed_sequence(seed, label):
    if seed < 0:
        raise ValueError("seed must be non-negative")
    tag = zlib.crc32(label.encode("utf-8")) & 0xFFFFFFFF
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, tag])


def substream(seed, label):
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(seed, label)))


class RngStreams:
    """Lazily created, independent generators keyed by label."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._streams = {}

    def __getitem__(self, label):
        if label not in self._streams:
            self._streams[label] = substream(self.seed, label)
        return self._streams[label]

    def child(self, label):
        """A fresh generator for ``label``, independent of the cached one."""
        return substream(self.seed, label)
