"""SplitMix64 counter-based generator shared by the sampler and the tree simulator.

Draw ``i`` of a stream keyed by ``key`` is ``finalize(key + (i + 1) * GOLDEN)``
with the usual SplitMix64 finalizer, so any draw can be computed directly
from ``(key, i)``.  All arithmetic is modulo 2**64, which makes the bits
identical on every platform.  Uniforms take the top 53 bits.
"""
import numpy as np
from numba import njit

GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
SALT_A = 0xD1B54A32D192ED03
SALT_B = 0x8CB92BA72F3D8DD7
MASK64 = (1 << 64) - 1
INV53 = 1.0 / 9007199254740992.0


def finalize_array(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def stream_bits(key, index):
    """Bits of draws ``index`` (array) of the stream keyed by ``key``."""
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key & MASK64) + (index + np.uint64(1)) * np.uint64(GOLDEN)
    return finalize_array(z)


def bits_to_open_uniform(bits):
    """Map 64-bit words to doubles in (0, 1]."""
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * INV53


class CounterRng:
    """Seeded counter-based generator: the state is just ``(seed, counter)``."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def uniform(self, size: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + size, dtype=np.uint64)
        self.counter += size
        return bits_to_open_uniform(stream_bits(self.seed, idx))


def replicate_seed(base_seed: int, index: int) -> int:
    return (int(base_seed) ^ int(index)) & MASK64


# numba versions; uint64 arithmetic wraps, matching the numpy path bit for bit.

@njit(cache=True)
def nb_finalize(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def nb_stream(key, index):
    return nb_finalize(key + (index + np.uint64(1)) * np.uint64(GOLDEN))


@njit(cache=True)
def nb_open_uniform(bits):
    return (np.float64(bits >> np.uint64(11)) + 1.0) * INV53
