"""Deterministic seed derivation: one master seed, labeled sub-streams.

Every source of randomness in the package draws from a generator derived
as ``derive_rng(master, "module", "purpose", index)``, so results are
reproducible across runs and independent of scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed_sequence", "derive_rng"]


def _label_key(label) -> int:
    digest = hashlib.sha256(repr(label).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def derive_seed_sequence(master: int, *labels) -> np.random.SeedSequence:
    """SeedSequence for a labeled sub-stream of the master seed."""
    return np.random.SeedSequence(entropy=int(master), spawn_key=tuple(_label_key(l) for l in labels))


def derive_rng(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(master, *labels))
