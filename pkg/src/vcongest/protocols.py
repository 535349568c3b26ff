"""Send-selection policies and the phase schedule.

Three protocols share one round engine:

* ``uniform``: every round each node sends a uniformly random message among
  those it knows and has not sent yet (the buffer changes every round).
* ``ranking``: round 0, a random phase of ``tau`` rounds, then ranking phases
  of ``tau_prime`` rounds. At the start of each phase a node freezes its
  buffer; within the phase it pops messages from the frozen buffer, uniformly
  in the random phase and by harmonic rank weights in ranking phases.
* ``ranking_shuffle``: as ``ranking`` with a shuffle phase of ``8*tau``
  rounds after every ranking phase.

Per-node decisions are vectorized across nodes: a node's choice only ever
reads its own row of the state arrays and its own random draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .topology import GnkLabels

__all__ = [
    "ALGORITHMS",
    "Phase",
    "PhasePlan",
    "build_plan",
    "RankDistribution",
    "harmonic",
    "rank_weights",
    "ranking_function",
    "sample_and_nullify",
    "uniform_pick",
    "is_fresh",
    "is_pioneer",
    "PhaseQueue",
    "weighted_pick",
]

ALGORITHMS = ("uniform", "ranking", "ranking_shuffle")

ROUND0 = "round0"
RANDOM = "random"
RANKING = "ranking"
SHUFFLE = "shuffle"
UNIFORM = "uniform"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Phase:
    kind: str
    index: int  # ranking/shuffle phase number p; 0 otherwise
    start: int
    end: int  # exclusive

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class PhasePlan:
    """Deterministic phase schedule.

    ``random_len`` equals ``tau`` except in deliberately broken plans used by
    mutation tests; thresholds always derive from ``tau``.
    """

    algorithm: str
    tau: int
    tau_prime: int
    shuffle_len: int
    random_len: int

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.tau < 0 or self.tau_prime < 1 or self.shuffle_len < 0 or self.random_len < 0:
            raise ValueError("phase lengths must be non-negative and tau_prime >= 1")

    @property
    def threshold(self) -> float:
        """Freshness threshold T = tau / 2."""
        return self.tau / 2

    @property
    def has_shuffle(self) -> bool:
        return self.algorithm == "ranking_shuffle"

    @property
    def period(self) -> int:
        return self.tau_prime + (self.shuffle_len if self.has_shuffle else 0)

    def ranking_start(self, p: int) -> int:
        """t_p, the first round of ranking phase ``p`` (p >= 1)."""
        return 1 + self.random_len + (p - 1) * self.period

    def ranking_end(self, p: int) -> int:
        """The round right after ranking phase ``p``."""
        return self.ranking_start(p) + self.tau_prime

    def tau_e(self, n: int, k: int) -> int:
        """Bound 2 (n/k) tau' on the round at which ranking phase n/k ends."""
        return 2 * (n // k) * self.tau_prime

    def phase_at(self, t: int) -> Phase:
        if t < 0:
            raise ValueError("negative round")
        if t == 0:
            return Phase(ROUND0, 0, 0, 1)
        if self.algorithm == "uniform":
            return Phase(UNIFORM, 0, 1, np.iinfo(np.int64).max)
        if t < 1 + self.random_len:
            return Phase(RANDOM, 0, 1, 1 + self.random_len)
        off = t - 1 - self.random_len
        p = off // self.period + 1
        start = self.ranking_start(p)
        if t < start + self.tau_prime:
            return Phase(RANKING, p, start, start + self.tau_prime)
        s = start + self.tau_prime
        return Phase(SHUFFLE, p, s, s + self.shuffle_len)

    def phases(self, horizon: int) -> Iterator[Phase]:
        """All non-empty phases starting before ``horizon``."""
        t = 0
        while t < horizon:
            ph = self.phase_at(t)
            yield ph
            t = ph.end

    def ranking_phase_of(self, t: int) -> int:
        """Number of the last ranking phase started at or before round ``t``."""
        if self.algorithm == "uniform" or t < 1 + self.random_len:
            return 0
        return (t - 1 - self.random_len) // self.period + 1


def build_plan(
    n: int,
    algorithm: str,
    alpha: float = 2.0,
    d: float = 1.0,
    log_base: float = 2.0,
    tau: int | None = None,
    tau_prime: int | None = None,
) -> PhasePlan:
    """tau = round(alpha log n), tau' = round(8 d tau log^2 n), shuffle = 8 tau."""
    if n < 1:
        raise ValueError("n must be positive")
    log_n = math.log(n, log_base) if n > 1 else 0.0
    if tau is None:
        tau = max(1, _round_half_up(alpha * log_n))
    if tau_prime is None:
        tau_prime = max(1, _round_half_up(8 * d * tau * log_n**2))
    return PhasePlan(algorithm, tau, tau_prime, 8 * tau, tau)


# ---------------------------------------------------------------------------
# ranking distribution


def harmonic(b: int) -> float:
    return math.fsum(1.0 / i for i in range(1, b + 1))


@dataclass
class RankDistribution:
    """Messages in rank order with raw weights ``1 / (r H_b)``."""

    order: list[int]
    weights: np.ndarray
    nullified: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.nullified is None:
            self.nullified = np.zeros(len(self.order), dtype=bool)

    def __len__(self) -> int:
        return len(self.order)

    def remaining(self) -> int:
        return int((~self.nullified).sum())

    def probabilities(self) -> np.ndarray:
        """Current sampling probabilities (nullified entries are 0)."""
        w = np.where(self.nullified, 0.0, self.weights)
        total = math.fsum(w)
        return w / total if total > 0 else w

    def probability_of(self, origin: int) -> float:
        return float(self.probabilities()[self.order.index(origin)])


def rank_weights(b: int) -> np.ndarray:
    """Raw weights ``1 / (r H_b)`` for ranks ``r = 1..b``."""
    if b < 0:
        raise ValueError("buffer size must be non-negative")
    if b == 0:
        return np.zeros(0)
    r = np.arange(1, b + 1, dtype=np.float64)
    return 1.0 / (r * math.fsum(1.0 / r))


def ranking_function(
    cnt: Mapping[int, int] | Sequence[tuple[int, int]],
    leading: Sequence[int] = (),
) -> RankDistribution:
    """Rank buffer entries by ``(cnt, origin)`` ascending.

    ``leading`` ids (a shuffle's selection, in its assigned order) take the
    first ranks; the remaining entries follow in count order.
    """
    items = dict(cnt.items() if isinstance(cnt, Mapping) else cnt)
    lead = [m for m in leading if m in items]
    lead_set = set(lead)
    rest = sorted((c, m) for m, c in items.items() if m not in lead_set)
    order = lead + [m for _, m in rest]
    return RankDistribution(order, rank_weights(len(order)))


def weighted_pick(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise index sampled proportionally to non-negative ``weights``.

    Rows must carry positive total weight. ``u`` holds one uniform per row.
    """
    csum = np.cumsum(weights, axis=1)
    total = csum[:, -1]
    x = u * total
    idx = (csum <= x[:, None]).sum(axis=1)
    # guard against x landing on the total through rounding
    last_pos = weights.shape[1] - 1 - np.argmax(weights[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last_pos)


def sample_and_nullify(dist: RankDistribution, rng) -> int | None:
    """Draw by the current renormalized weights and nullify the drawn entry.

    Returns ``None`` once every entry has been nullified.
    """
    live = np.where(dist.nullified, 0.0, dist.weights)
    if not (live > 0).any():
        return None
    i = int(weighted_pick(live[None, :], np.array([rng.random()]))[0])
    dist.nullified[i] = True
    return dist.order[i]


def uniform_pick(buffer: list[int], rng, own: int) -> int:
    """Pop a uniformly random entry of ``buffer``; an empty buffer yields ``own``."""
    if not buffer:
        return own
    i = min(int(rng.random() * len(buffer)), len(buffer) - 1)
    return buffer.pop(i)


def is_fresh(cnt: int, threshold: float, overridden: bool = False) -> bool:
    """Fresh means received fewer than T times and not demoted by a shuffle."""
    return cnt < threshold and not overridden


def is_pioneer(labels: GnkLabels, u: int, v: int, p: int, direction: int = 0) -> bool:
    """Whether ``m_v`` held by ``u`` at t_p originated p+1 cliques away.

    ``direction`` restricts to messages flowing upward (+1, from lower
    cliques) or downward (-1); 0 accepts either.
    """
    if p < 1:
        raise ValueError("pioneers are defined for ranking phases p >= 1")
    gap = labels.clique_of[u] - labels.clique_of[v]
    if direction > 0:
        return gap == p + 1
    if direction < 0:
        return gap == -(p + 1)
    return abs(gap) == p + 1


# ---------------------------------------------------------------------------
# frozen per-phase buffers, vectorized over nodes


class PhaseQueue:
    """Frozen buffers of all nodes for one phase.

    Row ``u`` lists the message ids of node ``u`` and their weights. Popping
    draws proportionally to the live weights and zeroes the drawn one, which
    is a uniform pop when all weights are equal.
    """

    def __init__(self, slots: np.ndarray, weights: np.ndarray) -> None:
        self.slots = slots
        self.weights = weights
        self.left = (weights > 0).sum(axis=1)
        self.initial_size = self.left.copy()

    @classmethod
    def empty(cls, n: int) -> "PhaseQueue":
        return cls(np.zeros((n, 1), dtype=np.int64), np.zeros((n, 1)))

    @classmethod
    def from_mask(cls, mask: np.ndarray, order_key: np.ndarray | None = None, harmonic_weights: bool = False) -> "PhaseQueue":
        """Build from a membership mask, ordering each row by ``order_key``."""
        n = mask.shape[0]
        sizes = mask.sum(axis=1)
        cap = max(1, int(sizes.max()) if n else 1)
        if order_key is None:
            order_key = np.broadcast_to(np.arange(mask.shape[1]), mask.shape)
        big = np.iinfo(np.int64).max
        key = np.where(mask, order_key, big)
        order = np.argsort(key, axis=1, kind="stable")[:, :cap]
        ranks = np.arange(cap)
        valid = ranks[None, :] < sizes[:, None]
        slots = np.where(valid, order, 0).astype(np.int64)
        if harmonic_weights:
            # 1/(r H_b): H_b is a per-row constant, kept for fidelity
            h = np.cumsum(1.0 / np.arange(1, cap + 1))
            hb = np.where(sizes > 0, h[np.maximum(sizes - 1, 0)], 1.0)
            w = 1.0 / ((ranks[None, :] + 1) * hb[:, None])
        else:
            w = np.ones((n, cap))
        weights = np.where(valid, w, 0.0)
        return cls(slots, weights)

    def pop(self, active: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Pop one id for each active row with entries left; -1 elsewhere."""
        out = np.full(self.slots.shape[0], -1, dtype=np.int64)
        rows = np.flatnonzero(active & (self.left > 0))
        if rows.size:
            idx = weighted_pick(self.weights[rows], u[rows])
            out[rows] = self.slots[rows, idx]
            self.weights[rows, idx] = 0.0
            self.left[rows] -= 1
        return out

    def exhausted(self, alive: np.ndarray) -> bool:
        return not (alive & (self.left > 0)).any()


class DynamicBuffer:
    """Per-node unsent-message lists that grow as messages arrive (uniform protocol)."""

    def __init__(self, n: int) -> None:
        self.buf = np.zeros((n, n), dtype=np.int64)
        self.length = np.zeros(n, dtype=np.int64)

    def append(self, nodes: np.ndarray, msgs: np.ndarray) -> None:
        """Append pairs, which must be unique and sorted by ``(node, msg)``."""
        if nodes.size == 0:
            return
        starts = np.r_[0, np.flatnonzero(np.diff(nodes)) + 1]
        group_start = np.repeat(starts, np.diff(np.r_[starts, nodes.size]))
        pos = self.length[nodes] + (np.arange(nodes.size) - group_start)
        self.buf[nodes, pos] = msgs
        np.add.at(self.length, nodes, 1)

    def pop(self, active: np.ndarray, u: np.ndarray) -> np.ndarray:
        out = np.full(self.length.size, -1, dtype=np.int64)
        rows = np.flatnonzero(active & (self.length > 0))
        if rows.size:
            ln = self.length[rows]
            idx = np.minimum((u[rows] * ln).astype(np.int64), ln - 1)
            out[rows] = self.buf[rows, idx]
            self.buf[rows, idx] = self.buf[rows, ln - 1]  # swap-remove
            self.length[rows] -= 1
        return out

    def exhausted(self, alive: np.ndarray) -> bool:
        return not (alive & (self.length > 0)).any()
