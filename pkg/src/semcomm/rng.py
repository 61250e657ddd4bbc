"""Seeded, decoupled random streams.

Every stochastic component of a run (environment noise, speaker exploration,
listener exploration, ...) draws from its own PCG64 generator so that changing
one component's draw pattern never perturbs the others. Streams are derived
from (base_seed, replica, purpose) through numpy's SeedSequence spawn keys,
which is stable across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_PURPOSES = {
    "scenario": 0,
    "env": 1,
    "speaker": 2,
    "listener": 3,
    "flat": 4,
    "probe": 5,
    "eval": 6,
}


def make_rng(base_seed: int, replica: int = 0, purpose: str = "env") -> np.random.Generator:
    """One generator for a (seed, replica, purpose) triple."""
    try:
        key = _PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown rng purpose {purpose!r}") from None
    seq = np.random.SeedSequence(entropy=base_seed, spawn_key=(replica, key))
    return np.random.default_rng(seq)


@dataclass
class RngBundle:
    """The per-replica streams used by a training run."""

    env: np.random.Generator
    speaker: np.random.Generator
    listener: np.random.Generator
    flat: np.random.Generator
    probe: np.random.Generator
    eval: np.random.Generator

    @classmethod
    def for_replica(cls, base_seed: int, replica: int = 0) -> "RngBundle":
        return cls(
            env=make_rng(base_seed, replica, "env"),
            speaker=make_rng(base_seed, replica, "speaker"),
            listener=make_rng(base_seed, replica, "listener"),
            flat=make_rng(base_seed, replica, "flat"),
            probe=make_rng(base_seed, replica, "probe"),
            eval=make_rng(base_seed, replica, "eval"),
        )
