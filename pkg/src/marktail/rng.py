"""Counter-based uniforms keyed by (seed, stream, entity, counter).

Each simulated path or agent owns its own substream, so a draw depends only
on its key and never on the order in which entities are processed.  The
mixer is SplitMix64's finaliser; both backends below produce identical
bits.
"""
import numpy as np

from ._accel import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def entity_key(seed, stream, entity):
    k = mix64(np.uint64(seed) + _GOLDEN * np.uint64(stream + 1))
    return mix64(k ^ mix64(np.uint64(entity) * _GOLDEN + _M1))


@njit
def uniform(key, counter):
    """Uniform on the open interval (0, 1)."""
    bits = mix64(key + _GOLDEN * np.uint64(counter + 1))
    return (float(bits >> _S11) + 0.5) * _INV53


def entity_keys(seed, stream, entities):
    """Vectorised ``entity_key`` over an integer array."""
    entities = np.asarray(entities, dtype=np.uint64)
    with np.errstate(over="ignore"):
        k = _mix64_np(np.array([np.uint64(seed) + _GOLDEN * np.uint64(stream + 1)],
                               dtype=np.uint64))[0]
        return _mix64_np(k ^ _mix64_np(entities * _GOLDEN + _M1))


def uniforms(keys, counter):
    """Vectorised ``uniform`` for an array of keys and a common counter."""
    with np.errstate(over="ignore"):
        c = _GOLDEN * np.uint64(counter + 1)
        bits = _mix64_np(keys + c)
    return ((bits >> _S11).astype(np.float64) + 0.5) * _INV53


def _mix64_np(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)
