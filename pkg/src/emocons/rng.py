"""Seed derivation: one root seed fans out into named, independent substreams.

Every random choice in the package (data generation, weight init, batch
shuffling) draws from a substream derived from the root seed and a string
name, so components can be varied or held fixed independently of each other.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, name: str) -> int:
    """Derive a stable 63-bit seed from a root seed and a substream name."""
    digest = hashlib.sha256(f"{root}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def substream(root: int, name: str) -> np.random.Generator:
    """A fresh Generator for the named substream of ``root``."""
    return np.random.default_rng(derive_seed(root, name))
