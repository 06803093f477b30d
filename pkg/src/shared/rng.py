"""
Reproducible random streams.

Every generator in the package is a numpy Philox counter-based generator.
Replica streams are keyed by ``seed_stream(base_seed, replica_index)`` and
split further by a small integer ``stream`` (graph, percolation, ...) that
occupies the high word of the 128-bit Philox key.
"""

import numpy as np

RNG_ALGORITHM = "numpy-philox4x64/splitmix64-v1"

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# Sub-stream identifiers within one replica
GRAPH_STREAM = 0
PERCOLATION_STREAM = 1
TREE_STREAM = 2
SPINE_STREAM = 3
SPECTRAL_STREAM = 4
ELBOW_STREAM = 5


def _splitmix64_finalize(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def seed_stream(base_seed: int, replica_index: int) -> int:
    """
    Derive the 64-bit seed of one replica from the run's base seed.

    The map is ``finalize(base + index * GOLDEN_GAMMA mod 2**64)``. The
    multiplier is odd and the splitmix64 finalizer is a bijection, so the
    map is injective in ``replica_index`` for indices below 2**64.
    """
    if replica_index < 0:
        raise ValueError("replica_index must be non-negative")
    z = (base_seed + replica_index * _GOLDEN_GAMMA) & _MASK64
    return _splitmix64_finalize(z)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``(seed, stream)``."""
    key = (seed & _MASK64) | ((stream & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def replica_rng(
    base_seed: int, replica_index: int, stream: int = 0
) -> np.random.Generator:
    return make_rng(seed_stream(base_seed, replica_index), stream)
