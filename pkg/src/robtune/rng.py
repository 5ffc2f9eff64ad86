"""Counter-based random streams keyed by structured labels.

Every source of randomness in the package draws from a Philox generator
whose 128-bit key is a hash of a (domain, *ints) label. Streams with
different labels are independent, and a given label always yields the
same stream regardless of call order, process, or platform. This is what
makes parallel training runs, per-sample attacks, and search trials
reproducible under any scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(domain: str, *parts: int) -> int:
    """128-bit key derived from a domain string and integer parts.

    Parts are hashed by their decimal representation, so arbitrarily
    large integers (e.g. nested keys) are fine.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(domain.encode("utf-8"))
    for p in parts:
        h.update(b"\x1f")
        h.update(str(int(p)).encode("ascii"))
    return int.from_bytes(h.digest(), "little")


def stream(domain: str, *parts: int) -> np.random.Generator:
    """Independent Philox generator for the given label."""
    return np.random.Generator(np.random.Philox(key=stream_key(domain, *parts)))
