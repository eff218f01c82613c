"""Deterministic random streams.

Every stochastic routine in the package draws from a Philox (counter-based)
generator whose key is derived from ``(seed, purpose, block)``.  Work is cut
into fixed-size blocks of paths/samples, so the numbers a block sees never
depend on how many blocks are evaluated, in which order, or on which thread.
"""

from __future__ import annotations

import numpy as np

#: number of paths (or samples) sharing one derived stream
BLOCK_SIZE = 4096

# purpose tags keep unrelated consumers on disjoint keys
PURPOSE_PATHS = 1
PURPOSE_EXPECTATION = 2
PURPOSE_CONDENSATION = 3
PURPOSE_POWERLAW = 4
PURPOSE_PERTURB = 5


def stream(seed: int, purpose: int, block: int = 0) -> np.random.Generator:
    """Return the generator for one ``(seed, purpose, block)`` triple."""
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), int(block)))
    key = ss.generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def blocks(n: int, size: int = BLOCK_SIZE):
    """Yield ``(block_index, start, stop)`` covering ``range(n)``."""
    for b, start in enumerate(range(0, n, size)):
        yield b, start, min(start + size, n)


def standard_normals(seed: int, purpose: int, n: int, shape_tail: tuple = ()) -> np.ndarray:
    """``n`` rows of standard normals, assembled block by block."""
    out = np.empty((n, *shape_tail))
    for b, start, stop in blocks(n):
        out[start:stop] = stream(seed, purpose, b).standard_normal((stop - start, *shape_tail))
    return out
