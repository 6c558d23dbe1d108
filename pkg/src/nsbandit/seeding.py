"""Stable seed derivation.

Every random stream is a numpy ``PCG64`` generator seeded from a SHA-256
digest of ``(base_seed, *labels)``. Labels are joined with ``"|"``, so the
stream for run 2 of policy ``SW-UCB`` in scenario ``ml-abrupt`` with base
seed 7 comes from ``sha256(b"7|ml-abrupt|SW-UCB|2")``. The first 16 bytes
of the digest, read big-endian, are the ``SeedSequence`` entropy.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base_seed: int, *labels) -> int:
    key = "|".join([str(int(base_seed))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:16], "big")


def stream(base_seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(derive_seed(base_seed, *labels))))
