"""Deterministic, platform-stable RNG streams.

Every stochastic draw in the simulator and trainer comes from a stream keyed
by labeled parts, so replaying any (seed, id, purpose) tuple reproduces the
exact draw regardless of call order, worker count, or platform hash state.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_seed(*parts) -> int:
    key = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def det_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(stream_seed(*parts))
