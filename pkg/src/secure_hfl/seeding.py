"""Labeled random streams derived from a single master seed.

Each subsystem asks for ``stream(master, "label", *ints)``; streams are
independent of one another and of the order in which they are created,
so adding a new consumer never shifts an existing sequence.
"""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def stream_seed(master, *labels):
    return np.random.SeedSequence([int(master) & 0xFFFFFFFF, *(_key(p) for p in labels)])


def stream(master, *labels):
    """Return a fresh Generator for the labeled stream."""
    return np.random.default_rng(stream_seed(master, *labels))


def derive_int(master, *labels):
    """Return a 32-bit integer seed for the labeled stream (for logging / manifests)."""
    return int(stream_seed(master, *labels).generate_state(1)[0])
