"""Counter-based randomness keyed by (run seed, purpose, node, round, ...).

Every draw is a pure function of its key, so a node's stream does not depend
on how many other nodes exist or on the order in which they are processed,
and whole rounds can be drawn as one vectorized call.
"""

from __future__ import annotations

import math
from enum import IntEnum

import numpy as np

__all__ = ["Purpose", "uniforms", "fail_rounds", "NodeStream", "NEVER"]

NEVER = np.iinfo(np.int64).max

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class Purpose(IntEnum):
    FAILURE = 1
    UNIFORM = 2
    RANDOM_PHASE = 3
    RANKING = 4
    SHUFFLE_POP = 5
    SHUFFLE_SELECT = 6
    TEST = 99


def _mix(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def _as_u64(v) -> np.ndarray:
    a = np.asarray(v)
    if a.dtype.kind == "u":
        return a.astype(np.uint64)
    return (a.astype(np.int64)).astype(np.uint64)


def uniforms(seed: int, purpose: int, *keys) -> np.ndarray:
    """Uniform floats in [0, 1), one per broadcast combination of ``keys``."""
    with np.errstate(over="ignore"):
        h = _mix(np.asarray([(seed & _MASK64)], dtype=np.uint64))
        h = _mix(h ^ np.uint64(int(purpose)))
        for key in keys:
            h = _mix(h ^ _as_u64(key))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def fail_rounds(seed: int, n: int, q: float) -> np.ndarray:
    """Round at which each node crashes, or ``NEVER``.

    A node that fails independently with probability ``q`` at the start of
    every round crashes at a geometric time; one inverse-CDF draw per node
    gives the same law as a Bernoulli trial per round.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if q == 0.0:
        return np.full(n, NEVER, dtype=np.int64)
    if q == 1.0:
        return np.zeros(n, dtype=np.int64)
    u = uniforms(seed, Purpose.FAILURE, np.arange(n))
    # P(fail_round >= t) = (1-q)^t
    t = np.floor(np.log1p(-u) / math.log1p(-q))
    return np.minimum(t, float(NEVER // 2)).astype(np.int64)


class NodeStream:
    """Sequential scalar stream with a ``random()`` method, for the scalar ops."""

    def __init__(self, seed: int, purpose: int = Purpose.TEST, node: int = 0) -> None:
        self.seed = seed
        self.purpose = purpose
        self.node = node
        self._counter = 0

    def random(self) -> float:
        u = float(uniforms(self.seed, self.purpose, self.node, self._counter)[0])
        self._counter += 1
        return u
