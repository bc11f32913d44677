"""Named seed derivation: one root seed fans out to per-component streams.

Every source of randomness in the pipeline takes (root_seed, label) so
components can be re-seeded independently and runs stay reproducible.
"""

import hashlib

import numpy as np


def child_seed(root: int, label: str) -> int:
    digest = hashlib.sha256(f"{root}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(root: int, label: str) -> np.random.Generator:
    return np.random.default_rng(child_seed(root, label))
