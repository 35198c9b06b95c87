"""Deterministic, addressable random-number streams.

Every stochastic stage draws from a Philox (counter-based) generator whose
key is derived from a seed plus a path of labels, e.g.
``stream(seed, "ood-test", 17)``. Reconstructing the same key always yields
the same stream, so parallel workers need no shared RNG state and benchmark
outputs are bit-reproducible regardless of scheduling order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _encode(part: int | str) -> bytes:
    if isinstance(part, bool):  # bool is an int subtype; keep it distinct
        raise TypeError("stream path parts must be int or str")
    if isinstance(part, int):
        return b"i" + part.to_bytes(16, "little", signed=True)
    if isinstance(part, str):
        return b"s" + part.encode("utf-8")
    raise TypeError(f"stream path parts must be int or str, got {type(part).__name__}")


def stream_key(seed: int, *path: int | str) -> int:
    """128-bit Philox key for (seed, *path), stable across platforms."""
    h = hashlib.sha256()
    h.update(_encode(seed))
    for part in path:
        h.update(b"/")
        h.update(_encode(part))
    return int.from_bytes(h.digest()[:16], "little")


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Generator addressed by (seed, *path). Same arguments, same draws."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *path)))


def derive_seed(seed: int, *path: int | str) -> int:
    """63-bit sub-seed for components that take a plain integer seed."""
    return stream_key(seed, *path) % (2**63)
