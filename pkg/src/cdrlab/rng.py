"""Deterministic random-stream derivation.

Every randomized operation draws from a generator derived from the master
seed plus a string key naming the operation and entity.  Streams are
independent of iteration order, so per-entity work can be parallelized or
re-chunked without changing a single draw.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_words(parts: tuple) -> list[int]:
    # Stable across platforms and Python hash randomization.
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def derive_rng(seed: int, *parts) -> np.random.Generator:
    """Generator for stream (seed, *parts); same key always yields same draws."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_words(parts)))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *parts) -> int:
    """A 63-bit integer sub-seed for code that wants a plain seed value."""
    words = _key_words(parts)
    return ((words[0] << 32) ^ (words[1] << 16) ^ words[2] ^ int(seed)) & (2**63 - 1)
