"""Counter-based noise indexed by absolute time.

A stream is a pure function of ``(seed, index)``.  Shifting the noise path
(the metric dynamical system's ``theta``) is an exact re-indexing, so
pull-backs can read noise at negative times without replaying a sequential
generator.

The mixing function is the SplitMix64 finalizer applied twice: once to the
scaled counter and once after keying with the (mixed) seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S12 = np.uint64(12)
_TWO_M52 = 2.0**-52
_HALF_STEP = 2.0**-53

_U64_MAX = 2**64 - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def as_seed_array(seed) -> np.ndarray:
    """Coerce python ints / arrays to uint64, rejecting values outside [0, 2**64)."""
    if isinstance(seed, (int, np.integer)):
        seed = int(seed)
        if seed < 0 or seed > _U64_MAX:
            raise ValueError(f"seed must be in [0, 2**64), got {seed}")
        return np.asarray(seed, dtype=np.uint64)
    arr = np.asarray(seed)
    if arr.dtype == np.uint64:
        return arr
    if np.any(arr < 0):
        raise ValueError("seeds must be non-negative")
    return arr.astype(np.uint64)


def counter_bits(seed, index) -> np.ndarray:
    """Raw 64-bit output for (seed, index); both broadcast elementwise.

    ``index`` may be negative; it is reinterpreted as two's complement.
    """
    s = np.atleast_1d(as_seed_array(seed))
    i = np.atleast_1d(np.asarray(index, dtype=np.int64)).astype(np.uint64)
    with np.errstate(over="ignore"):
        key = _mix64(s + _GOLDEN)
        return _mix64(key ^ _mix64(i * _GOLDEN))


def counter_uniform(seed, index) -> np.ndarray:
    """Uniform symbols in the open interval (0, 1) for (seed, index).

    Cell midpoints (2k + 1) 2**-53 of a 52-bit grid: every value is exact,
    so neither 0 nor 1 can occur.
    """
    bits = counter_bits(seed, index)
    return (bits >> _S12).astype(np.float64) * _TWO_M52 + _HALF_STEP


def uniform_to_normal(u):
    """Standard normal symbol by inverse CDF (one uniform per normal)."""
    return ndtri(u)


def spawn_seeds(seed: int, n: int) -> np.ndarray:
    """``n`` independent 64-bit stream seeds derived from one master seed."""
    ss = np.random.SeedSequence(int(seed))
    return ss.generate_state(n, dtype=np.uint64)


@dataclass(frozen=True)
class NoiseStream:
    """One noise realisation omega, read at absolute integer times.

    ``uniform(k)`` returns the symbol omega(index_origin + k).  ``shift(n)``
    is theta^n: ``stream.shift(n).uniform(k) == stream.uniform(n + k)``.
    """

    seed: int
    index_origin: int = 0

    def __post_init__(self):
        as_seed_array(self.seed)

    def uniform(self, k):
        k = np.asarray(k, dtype=np.int64)
        out = counter_uniform(self.seed, k + np.int64(self.index_origin))
        if k.ndim == 0:
            return float(out[0])
        return out

    def normal(self, k):
        return uniform_to_normal(self.uniform(k))

    def shift(self, n: int) -> "NoiseStream":
        return NoiseStream(self.seed, self.index_origin + int(n))
