"""Counter-based random streams keyed by (seed, purpose tag, indices).

Every stream is a Philox generator whose key is derived from a SeedSequence
over the integer seed, a CRC32 of the tag and any extra indices.  Streams for
different trials never share state, so results do not depend on the order or
process in which trials execute.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, tag: str, *indices: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), _tag(tag), *map(int, indices)])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, tag: str, *indices: int) -> int:
    """A 63-bit integer seed for the sub-stream (seed, tag, *indices)."""
    ss = np.random.SeedSequence([int(seed), _tag(tag), *map(int, indices)])
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return int((int(hi) << 31) ^ int(lo)) & ((1 << 63) - 1)
