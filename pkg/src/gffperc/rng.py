"""Counter-based random numbers.

Every variate is a pure function of ``(key, counter)``, so a replica's
stream never depends on how work is split across chunks or threads.
The mixer is the SplitMix64 finalizer applied twice with a keyed Weyl
offset. Uniforms carry 53 bits and are shifted off zero, so the
inverse normal CDF is always finite.
"""

import numpy as np
from numba import njit
from scipy import special

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

_MASK = (1 << 64) - 1


def _mix_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_key(seed: int, *path: int) -> int:
    """Derive a 64-bit stream key from a master seed and an index path."""
    k = _mix_int(int(seed) + 0x9E3779B97F4A7C15)
    for p in path:
        k = _mix_int(k ^ _mix_int(int(p) * 0xD1B54A32D192ED03 + 0x632BE59BD9B4E019))
    return k


def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def raw64(key: int, counters) -> np.ndarray:
    """Raw 64-bit outputs for an array of counters under ``key``."""
    c = np.asarray(counters, dtype=np.uint64)
    k = np.uint64(key)
    k2 = np.uint64(_mix_int(key ^ 0x5851F42D4C957F2D))
    with np.errstate(over="ignore"):
        return _mix(_mix(c * GOLDEN + k) ^ k2)


def uniforms(key: int, counters) -> np.ndarray:
    """Uniform variates in (0, 1)."""
    r = raw64(key, counters) >> _S11
    return (r.astype(np.float64) + 0.5) * _INV53


def normals(key: int, counters) -> np.ndarray:
    """Standard Gaussians via the inverse CDF."""
    return special.ndtri(uniforms(key, counters))


def replica_normals(seed: int, tag: int, replicas, width: int) -> np.ndarray:
    """Gaussian block of shape (len(replicas), width).

    Row ``i`` depends only on ``(seed, tag, replicas[i])``.
    """
    replicas = np.asarray(replicas, dtype=np.int64)
    out = np.empty((replicas.size, width))
    cols = np.arange(width, dtype=np.uint64)
    for i, r in enumerate(replicas):
        out[i] = normals(stream_key(seed, tag, int(r)), cols)
    return out


@njit(cache=True, inline="always")
def nb_raw64(k1, k2, counter):
    z = np.uint64(counter) * np.uint64(0x9E3779B97F4A7C15) + k1
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    z = z ^ k2
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def nb_uniform(k1, k2, counter):
    r = nb_raw64(k1, k2, counter) >> np.uint64(11)
    return (np.float64(r) + 0.5) * (1.0 / 9007199254740992.0)


def key_pair(key: int) -> tuple[np.uint64, np.uint64]:
    """The two words used by the jitted mixer for ``key``."""
    return np.uint64(key), np.uint64(_mix_int(key ^ 0x5851F42D4C957F2D))
