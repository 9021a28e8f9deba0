"""Deterministic RNG substreams.

Every stochastic stage derives its generator from (seed, label, index...)
through SeedSequence spawn keys, so results never depend on worker count or
scheduling order.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream"]


def _key_part(part) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.sha256(part.encode()).digest()[:4], "little")
    return int(part)


def substream(seed: int, *key) -> np.random.Generator:
    """Generator for the substream identified by (seed, *key).

    String key parts are hashed stably; integer parts are used as-is.
    """
    spawn = tuple(_key_part(p) for p in key)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn))
