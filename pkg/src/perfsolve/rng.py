"""Counter-based random number streams for walker simulation.

Every Gaussian increment is a pure function of (seed, stream, step), so a
walker's path is reproducible independently of batching or evaluation order.
The construction chains the splitmix64 finalizer, which has full avalanche,
over the three key components.
"""

from __future__ import annotations

import math

import numba
import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_TWO_NEG53 = 2.0 ** -53
_TWO_PI = 2.0 * math.pi


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer (pure Python)."""
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def substream_seed(seed: int, tag: int) -> int:
    """Derive an independent 64-bit seed, e.g. per training iteration."""
    return mix64(mix64(seed & _MASK) ^ (tag & _MASK))


def normal_pair(seed: int, stream: int, step: int) -> tuple[float, float]:
    """Two standard normals for (seed, stream, step), via Box-Muller."""
    k = mix64(mix64(mix64(seed & _MASK) ^ (stream & _MASK)) ^ (step & _MASK))
    a = mix64(k ^ 0xA5A5A5A5A5A5A5A5)
    b = mix64(k ^ 0x5A5A5A5A5A5A5A5A)
    u1 = ((a >> 11) + 1) * _TWO_NEG53  # in (0, 1]
    u2 = (b >> 11) * _TWO_NEG53  # in [0, 1)
    r = math.sqrt(-2.0 * math.log(u1))
    return r * math.cos(_TWO_PI * u2), r * math.sin(_TWO_PI * u2)


@numba.njit(numba.types.UniTuple(numba.float64, 2)(numba.uint64, numba.uint64, numba.uint64),
            cache=True, inline="always")
def normal_pair_nb(seed, stream, step):  # pragma: no cover - exercised via kernels
    z = seed
    z = (z + numba.uint64(_GOLDEN))
    z = (z ^ (z >> numba.uint64(30))) * numba.uint64(_MIX1)
    z = (z ^ (z >> numba.uint64(27))) * numba.uint64(_MIX2)
    z = z ^ (z >> numba.uint64(31))
    z = z ^ stream
    z = (z + numba.uint64(_GOLDEN))
    z = (z ^ (z >> numba.uint64(30))) * numba.uint64(_MIX1)
    z = (z ^ (z >> numba.uint64(27))) * numba.uint64(_MIX2)
    z = z ^ (z >> numba.uint64(31))
    z = z ^ step
    z = (z + numba.uint64(_GOLDEN))
    z = (z ^ (z >> numba.uint64(30))) * numba.uint64(_MIX1)
    z = (z ^ (z >> numba.uint64(27))) * numba.uint64(_MIX2)
    k = z ^ (z >> numba.uint64(31))

    a = k ^ numba.uint64(0xA5A5A5A5A5A5A5A5)
    a = (a + numba.uint64(_GOLDEN))
    a = (a ^ (a >> numba.uint64(30))) * numba.uint64(_MIX1)
    a = (a ^ (a >> numba.uint64(27))) * numba.uint64(_MIX2)
    a = a ^ (a >> numba.uint64(31))

    b = k ^ numba.uint64(0x5A5A5A5A5A5A5A5A)
    b = (b + numba.uint64(_GOLDEN))
    b = (b ^ (b >> numba.uint64(30))) * numba.uint64(_MIX1)
    b = (b ^ (b >> numba.uint64(27))) * numba.uint64(_MIX2)
    b = b ^ (b >> numba.uint64(31))

    u1 = (numba.float64(a >> numba.uint64(11)) + 1.0) * _TWO_NEG53
    u2 = numba.float64(b >> numba.uint64(11)) * _TWO_NEG53
    r = math.sqrt(-2.0 * math.log(u1))
    return r * math.cos(_TWO_PI * u2), r * math.sin(_TWO_PI * u2)


def _mix64_arr(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def normal_pairs(seed: int, streams: np.ndarray, step: int) -> np.ndarray:
    """Vectorized normal_pair over an array of stream ids; returns (n, 2)."""
    with np.errstate(over="ignore"):
        k = _mix64_arr(np.uint64(mix64(seed & _MASK)) ^ streams.astype(np.uint64))
        k = _mix64_arr(k ^ np.uint64(step & _MASK))
        a = _mix64_arr(k ^ np.uint64(0xA5A5A5A5A5A5A5A5))
        b = _mix64_arr(k ^ np.uint64(0x5A5A5A5A5A5A5A5A))
    u1 = ((a >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_NEG53
    u2 = (b >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty((streams.shape[0], 2))
    out[:, 0] = r * np.cos(_TWO_PI * u2)
    out[:, 1] = r * np.sin(_TWO_PI * u2)
    return out


class WalkerRng:
    """Per-walker stream handle; each draw consumes one step index."""

    def __init__(self, seed: int, stream: int, step: int = 0):
        self.seed = seed
        self.stream = stream
        self.step = step

    def draw(self) -> tuple[float, float]:
        z = normal_pair(self.seed, self.stream, self.step)
        self.step += 1
        return z
