"""Named derivation of RNG streams from one root seed.

Every stage (dataset cell, training loop, attack, ...) draws its generator
via derive_rng(root, "stage", index, ...), so parallel and serial runs, and
independent re-runs of a single stage, see identical streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *parts) -> int:
    tag = ":".join([str(int(root))] + [str(p) for p in parts])
    digest = hashlib.sha256(tag.encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(root: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *parts))
