"""Named, counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, stream name)``, so the
draws a run consumes for, say, reward noise never depend on how many draws
another stream (policy noise, diagnostics) has consumed.
"""

from __future__ import annotations

import zlib

import numpy as np

INSTANCE = "instance"
POLICY_NOISE = "policy-noise"
REWARD_NOISE = "reward-noise"
ORACLE = "oracle"


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, name, *extra)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _name_key(name), *[int(e) for e in extra]]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def run_seed(base_seed: int, run_id: int) -> int:
    return int(base_seed) + int(run_id)
