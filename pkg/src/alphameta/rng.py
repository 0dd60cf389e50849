"""Seeded, splittable random streams.

Every stream is a Philox (counter-based) generator keyed by the root seed plus
a path of labels, so that e.g. ``make_rng(7, "trial", 3, "target")`` is stable
across platforms and independent of the order in which streams are created.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"stream keys must be non-negative, got {part}")
    return int(part)


def make_rng(seed: int, *path: int | str) -> np.random.Generator:
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(_key(p) for p in path)])
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *path: int | str) -> int:
    """A 63-bit child seed, for handing to code that takes an integer seed."""
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(_key(p) for p in path)])
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
