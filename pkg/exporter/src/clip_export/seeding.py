"""Deterministic RNG streams keyed by string identifiers.

SHA-256 of the joined key seeds a PCG64 generator, so every synthetic
artifact (fake encoder weights, fake dataset pixels) is a pure function of
its textual identity and reproduces bit-for-bit across runs and machines.
"""

from __future__ import annotations

import hashlib

import numpy as np


def rng_for(*parts: object) -> np.random.Generator:
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    seed = int.from_bytes(hashlib.sha256(key).digest()[:16], "little")
    return np.random.Generator(np.random.PCG64(seed))
