"""Deterministic sub-seed derivation.

Every random choice in the pipeline flows from one 64-bit root seed. A
component that needs its own stream derives a sub-seed from the root plus a
purpose tag (and optional integer qualifiers such as a round or identity
index). Derivation is SHA-256 over the root and the tags, truncated to
64 bits, so streams for different purposes are independent and the whole
pipeline is reproducible from the root seed alone.
"""

import hashlib

import numpy as np


def derive_seed(root: int, *tags: str | int) -> int:
    """Derive a 64-bit sub-seed from ``root`` and a sequence of purpose tags."""
    h = hashlib.sha256()
    h.update(int(root).to_bytes(8, "little", signed=False))
    for tag in tags:
        h.update(str(tag).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(root: int, *tags: str | int) -> np.random.Generator:
    """A fresh PCG64 generator seeded by :func:`derive_seed`."""
    return np.random.Generator(np.random.PCG64(derive_seed(root, *tags)))
