"""Seeded counter-based random streams.

Each stream is a Philox generator keyed by ``(seed, purpose, *indices)``,
so draws for restart ``r`` / iteration ``t`` never depend on how many other
streams were consumed, or in which order, or by which worker.  Normals come
from the inverse normal CDF of 53-bit uniforms on the open unit interval.
"""

import numpy as np
from scipy.special import ndtri

GRADIENT = 1
ESTIMATE = 2
START = 3
FALLBACK = 4
REPAIR = 5
DIAGNOSTIC = 6
INIT = 7
HYPER = 8
POLICY = 9

_CHUNK_ROWS = 1 << 17


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def uniforms(gen: np.random.Generator, size: int) -> np.ndarray:
    raw = gen.bit_generator.random_raw(size)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normals(gen: np.random.Generator, shape) -> np.ndarray:
    shape = tuple(np.atleast_1d(shape))
    return ndtri(uniforms(gen, int(np.prod(shape)))).reshape(shape)


def normal_chunks(gen: np.random.Generator, rows: int, cols: int, chunk_rows: int = _CHUNK_ROWS):
    """Yield ``(rows, cols)`` standard normals in row blocks; identical to one big draw."""
    done = 0
    while done < rows:
        k = min(chunk_rows, rows - done)
        yield normals(gen, (k, cols))
        done += k


def derive_seed(seed: int, *key: int) -> int:
    """A 32-bit child seed, used to hand independent seeds to sub-runs."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
