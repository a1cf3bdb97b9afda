"""Counter-based random streams: one independent generator per (seed, purpose, index)."""

from __future__ import annotations

import numpy as np

PBA = 1
TREATMENT = 2
CROSSFIT = 3
NETWORK = 4
OUTCOMES = 5


def stream(seed: int, purpose: int, *index: int) -> np.random.Generator:
    """Generator keyed on the master seed, a purpose tag and an item index.

    Streams for different indices are statistically independent and do not
    depend on evaluation order, so work items can run in any order or in parallel.
    """
    if seed < 0:
        raise ValueError("seed must be a nonnegative integer")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(purpose), *map(int, index)])))
