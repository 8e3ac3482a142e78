"""Deterministic per-stage random streams forked from one master seed."""
import zlib

import numpy as np


def _key(name):
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def seed_sequence(seed, *names):
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))


def stream(seed, *names):
    """Generator for the stage path ``names`` under master ``seed``.

    Streams for different paths are independent, and a stage can be
    reproduced in isolation from ``(seed, names)`` alone.
    """
    return np.random.default_rng(seed_sequence(seed, *names))


def child_seed(seed, *names):
    """A 63-bit integer seed for a sub-component (e.g. a compiled kernel)."""
    return int(seed_sequence(seed, *names).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
