"""Counter-based random streams keyed by campaign coordinates.

Every stream is a Philox generator whose key is derived from
``(master_seed, *key)`` through :class:`numpy.random.SeedSequence`, so the
values a snapshot sees never depend on execution order.
"""

from __future__ import annotations

import numpy as np

GEOMETRY = 0
PILOTS = 1
ACTIVATIONS = 2
CHANNELS = 3
ORACLE = 4


def stream(master_seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def crandn(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
