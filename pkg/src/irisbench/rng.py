"""Deterministic randomness plumbing.

A single user-supplied integer seed fans out into independent named
sub-streams.  Stream identity depends only on the seed and the scope
strings, never on call order or worker count, so any stage can be
re-run or parallelized without perturbing the draws of another stage.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *scope) -> int:
    """Collapse (seed, scope...) into a stable 64-bit integer.

    Scope elements may be strings or ints; they are joined into a
    canonical byte string and hashed, so e.g. ("enc", 12) and
    ("enc12",) give unrelated values.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode("ascii"))
    for part in scope:
        h.update(b"\x1f")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest(), "little") & _MASK64


def substream(seed: int, *scope) -> np.random.Generator:
    """Named sub-stream generator for (seed, scope...)."""
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode("ascii"))
    for part in scope:
        h.update(b"\x1f")
        h.update(str(part).encode("utf-8"))
    d = h.digest()
    entropy = [int(seed) & _MASK64,
               int.from_bytes(d[:8], "little"),
               int.from_bytes(d[8:], "little")]
    return np.random.default_rng(np.random.SeedSequence(entropy))
