"""Seeded RNG streams keyed by (seed, purpose tag, ...).

Each consumer asks for its own stream so that, e.g., regenerating a dataset
does not shift the random numbers drawn by training.
"""
import zlib

import numpy as np


def _word(part):
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"seed components must be non-negative, got {part}")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed, *tags):
    return np.random.default_rng(np.random.SeedSequence([_word(seed)] + [_word(t) for t in tags]))
