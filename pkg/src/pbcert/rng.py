"""Splittable, scheduling-independent random streams.

Child seeds are derived by hashing (seed, stream ids), so a grid cell or a
Monte Carlo draw always sees the same stream no matter in which order the
work items execute.
"""

import hashlib

import numpy as np


def child_seed(seed: int, *stream) -> int:
    """Derive a 64-bit child seed from a master seed and a stream id path."""
    payload = repr((int(seed),) + tuple(stream)).encode()
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_for(seed: int, *stream) -> np.random.Generator:
    """Generator for the stream identified by (seed, *stream)."""
    return np.random.default_rng(child_seed(seed, *stream))
