"""Deterministic randomness plumbing.

Every stochastic decision in the package is keyed by (root seed, purpose
string, integer coordinates).  Two derivation paths exist:

* ``make_rng`` builds a ``numpy.random.Generator`` for low-frequency uses
  (weight init, shuffles, synthetic data).
* ``uniform_lanes`` produces per-sample uniforms directly from a counter-based
  hash, so an augmentation batch at iteration t can be reproduced without
  replaying any generator history.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
_MASK64 = (1 << 64) - 1


def mix64(x: np.ndarray | int) -> np.ndarray:
    """splitmix64 finalizer, vectorized; bijective on uint64."""
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64)
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def _part_to_u64(part) -> np.uint64:
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
        return _U64(int.from_bytes(digest, "little"))
    return _U64(int(part) & _MASK64)


def derive_key(root: int, *parts) -> int:
    """Collapse (root, part, part, ...) into one well-mixed 64-bit key.

    Parts may be ints (negative allowed, taken mod 2**64) or strings; strings
    hash through blake2b so the mapping is stable across interpreter runs.
    """
    with np.errstate(over="ignore"):
        h = mix64(_U64(int(root) & _MASK64) + _GOLDEN)
        for part in parts:
            h = mix64((h ^ _part_to_u64(part)) + _GOLDEN)
    return int(h)


def make_rng(root: int, *parts) -> np.random.Generator:
    """Independent generator for the stream named by ``parts``."""
    return np.random.Generator(np.random.PCG64(derive_key(root, *parts)))


def uniform_lanes(key: int, t: int, indices: np.ndarray, width: int) -> np.ndarray:
    """Deterministic uniforms in [0, 1), shape (len(indices), width).

    Row i depends only on (key, t, indices[i], lane); identical coordinates
    give identical values no matter how many batches were drawn before.
    """
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = mix64(_U64(key) ^ (_U64(int(t) & _MASK64) + _GOLDEN))
        rows = mix64(base + idx * _GOLDEN)
        lanes = np.arange(width, dtype=np.uint64) * _MIX1
        bits = mix64(rows[:, None] + lanes[None, :])
    return (bits >> _U64(11)).astype(np.float64) * (2.0 ** -53)
