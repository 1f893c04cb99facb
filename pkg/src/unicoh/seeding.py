"""Named random substreams derived from one run seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *names: str | int) -> np.random.Generator:
    """Independent generator for ``(seed, *names)``.

    The same key always yields the same stream, regardless of what other
    streams were drawn before, so per-document generation can run in any order.
    """
    key = [int(seed) & 0xFFFFFFFF]
    for name in names:
        key.append(int(name) if isinstance(name, int) else zlib.crc32(str(name).encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(key))
