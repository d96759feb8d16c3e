"""Deterministic seed derivation.

Every random stream in the harness is keyed by a path of labels hashed with
SHA-256, so a stream depends only on what it is for (run seed, phase, epoch,
sample id, ...) and never on process history or worker layout.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Hash a label path into a 64-bit seed."""
    key = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(*parts) -> np.random.Generator:
    """A fresh Generator keyed by a label path."""
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
