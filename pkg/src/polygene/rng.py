"""Reproducible random streams.

Every stream is a counter-based Philox generator keyed by a ``SeedSequence``
built from a root seed and a spawn key. Replicate ``i`` of a run uses spawn
key ``(i,)``; sub-streams inside a replicate append further integers. The
derivation depends only on integers, so it is stable across processes and
platforms.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

GENERATOR_FAMILY = "numpy.random.Philox(SeedSequence(root_seed, spawn_key))"


def make_rng(seed: int, stream: Sequence[int] = ()) -> np.random.Generator:
    if seed is None or int(seed) < 0:
        raise ValueError("seed must be a nonnegative integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def replicate_rng(seed: int, replicate: int, *sub: int) -> np.random.Generator:
    """Stream for ``replicate`` of a run rooted at ``seed``."""
    return make_rng(seed, (replicate, *sub))


def replicate_seed(seed: int, replicate: int) -> int:
    """A 64-bit integer fingerprint of a replicate stream, for manifests and logs."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replicate),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
