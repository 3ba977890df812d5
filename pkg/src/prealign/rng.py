"""Counter-based random streams.

Every Monte Carlo sample draws from its own Philox4x64-10 block, addressed by
``(seed, sample index)``.  The vectorised block function here reproduces
exactly what ``numpy.random.Philox(key=seed, counter=[0, 0, index, 0])``
emits first, so a sample never depends on how the ensemble is chunked or how
many workers evaluate it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_ROUNDS = 10
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngSpec:
    seed: int = 20240601

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")


def _mulhilo(a, b):
    a_lo, a_hi = a & _LO32, a >> _S32
    b_lo, b_hi = b & _LO32, b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, a * b


def philox_block(seed: int, index) -> np.ndarray:
    """Return the first four raw 64-bit words of each substream.

    ``index`` may be a scalar or an array; the result has shape
    ``(*index.shape, 4)``.
    """
    idx = np.asarray(index, dtype=np.uint64)
    seed = int(seed) & _MASK64
    with np.errstate(over="ignore"):
        # numpy's Philox bumps the counter once before emitting the first block
        c0 = np.full(idx.shape, 1, dtype=np.uint64)
        c1 = np.zeros(idx.shape, dtype=np.uint64)
        c2 = idx.copy()
        c3 = np.zeros(idx.shape, dtype=np.uint64)
        k0 = np.uint64(seed)
        k1 = np.uint64(0)
        for r in range(_ROUNDS):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def uniform_block(seed: int, index) -> np.ndarray:
    """Four doubles in [0, 1) per substream, 53-bit resolution."""
    raw = philox_block(seed, index)
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53


def rng_substream(spec: RngSpec, index: int) -> np.random.Generator:
    """Generator for one sample's private stream.

    The first four ``random_raw`` words equal ``philox_block(spec.seed, index)``.
    """
    if index < 0:
        raise ValueError("substream index must be non-negative")
    bitgen = np.random.Philox(key=int(spec.seed), counter=[0, 0, int(index), 0])
    return np.random.Generator(bitgen)
