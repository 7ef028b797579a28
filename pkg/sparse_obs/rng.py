"""
Random number generation. All samplers go through :func:`make_rng` so that the bit
generator is fixed and recorded in run manifests.
"""
import numpy as np

BIT_GENERATOR = "PCG64"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def derived_seed(seed_base: int, replica_index: int) -> int:
    """Seed of replica ``replica_index`` (splitting convention: seed_base + replica_index)."""
    return int(seed_base) + int(replica_index)
