"""Deterministic seed derivation.

Every random consumer (weight init, shuffling, the synthetic generator,
benchmark cells) gets its own stream derived from one root seed, so a
whole run is reproducible from a single integer.
"""

import hashlib

import numpy as np


def derive_seed(root: int, *parts) -> int:
    """Derive a child seed from a root seed and a label path.

    Stable across processes and platforms (sha256 based, not ``hash()``).
    """
    key = ":".join([str(int(root))] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def rng_for(root: int, *parts) -> np.random.Generator:
    """A fresh generator seeded from ``derive_seed(root, *parts)``."""
    return np.random.default_rng(derive_seed(root, *parts))
