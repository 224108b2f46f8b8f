"""Stable cross-platform seed derivation for data generation.

Python's built-in string hash is salted per process, so derived seeds go
through SHA-256 instead.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: int | str) -> int:
    """Deterministically derive a 63-bit seed from mixed parts."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode())
    return int.from_bytes(digest.digest()[:8], "little") & 0x7FFFFFFFFFFFFFFF


def derived_rng(*parts: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
