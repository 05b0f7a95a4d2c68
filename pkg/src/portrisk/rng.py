"""Deterministic random stream derivation.

Every random draw in this package flows through numpy's Philox generator,
a counter-based algorithm whose output is identical across platforms and
process boundaries.  A stream is identified by an ordered tuple of labels
(ints, floats, strings).  The tuple is rendered canonically, hashed with
SHA-256, and the first 128 bits of the digest become the Philox key, so
distinct label tuples give independent streams and the same tuple always
gives the same stream regardless of how many workers are running.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _canonical(part) -> str:
    if isinstance(part, bool):
        return "T" if part else "F"
    if isinstance(part, (int, np.integer)):
        return str(int(part))
    if isinstance(part, (float, np.floating)):
        return repr(float(part))
    if isinstance(part, str):
        return part
    raise TypeError(f"unsupported seed label type: {type(part).__name__}")


def derive_key(*parts) -> np.ndarray:
    """Hash the label tuple into a 128-bit Philox key (two uint64 words)."""
    tag = "\x1f".join(_canonical(p) for p in parts)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return np.frombuffer(digest[:16], dtype="<u8").copy()


def derive_rng(*parts) -> np.random.Generator:
    """Return a Generator on an independent stream keyed by the labels."""
    return np.random.Generator(np.random.Philox(key=derive_key(*parts)))
