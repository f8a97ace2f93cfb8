"""Counter-based random streams.

Every stochastic routine takes an integer seed. Independent sub-streams are
derived with Philox keyed on the seed, so the k-th trajectory or walk always
sees the same numbers regardless of how work is split across threads.
"""

from __future__ import annotations

import numpy as np


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


def spawn_seeds(seed: int, n: int, stream: int = 1) -> np.ndarray:
    """``n`` 32-bit seeds for compiled kernels, one per task index."""
    return generator(seed, stream).integers(0, 2**32 - 1, size=n, dtype=np.uint32).astype(np.int64)
