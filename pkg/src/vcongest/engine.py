"""Round-synchronous Vertex-Congest engine with crash failures.

In every round each live node sends one packet, carrying one message id, to
all of its neighbours. Receivers count every packet (``cnt``), so two
neighbours forwarding the same message count twice. Crash rounds are drawn
up front; a node crashing at round ``t`` neither sends nor receives from
round ``t`` on.

Shuffle rounds are special: receptions feed the shuffle-local ``phasecnt``
table only, sends are not recorded as sent, and knowledge is merged when the
shuffle ends.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from . import protocols as P
from .protocols import DynamicBuffer, Phase, PhasePlan, PhaseQueue, build_plan
from .rng import NEVER, Purpose, fail_rounds, uniforms
from .topology import Topology, build_gnk

logger = logging.getLogger(__name__)

__all__ = [
    "SimConfig",
    "SimState",
    "RunTrace",
    "PhaseRecord",
    "ContractViolation",
    "SEND",
    "FILLER",
    "SHUFFLE_SEND",
    "init",
    "step",
    "fast_forward",
    "run",
    "completion_round",
]

SEND, FILLER, SHUFFLE_SEND = 0, 1, 2
_PURPOSE = {
    P.RANDOM: Purpose.RANDOM_PHASE,
    P.RANKING: Purpose.RANKING,
    P.SHUFFLE: Purpose.SHUFFLE_POP,
    P.UNIFORM: Purpose.UNIFORM,
}
VERBOSE_NODE_LIMIT = 64


class ContractViolation(RuntimeError):
    """A policy chose a message the node may not send."""


@dataclass(frozen=True)
class SimConfig:
    n: int
    k: int
    protocol: str = "ranking"
    alpha: float = 2.0
    d: float = 1.0
    c_hat: float = 0.5
    q: float = 0.0
    seed: int = 0
    horizon: int | None = None
    trials: int = 1
    log_base: float = 2.0
    tau: int | None = None
    tau_prime: int | None = None

    def __post_init__(self) -> None:
        if self.protocol not in P.ALGORITHMS:
            raise ValueError(f"protocol must be one of {P.ALGORITHMS}, got {self.protocol!r}")
        if self.k < 2 or self.n < self.k or self.n % self.k:
            raise ValueError(f"need k >= 2 dividing n, got n={self.n}, k={self.k}")
        if not 0 < self.c_hat <= 0.5:
            raise ValueError(f"c_hat must lie in (0, 1/2], got {self.c_hat}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {self.q}")
        if self.alpha <= 0 or self.d <= 0:
            raise ValueError("alpha and d must be positive")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.trials < 1:
            raise ValueError("trials must be positive")

    def plan(self) -> PhasePlan:
        return build_plan(self.n, self.protocol, self.alpha, self.d, self.log_base, self.tau, self.tau_prime)

    def effective_horizon(self) -> int:
        if self.horizon is not None:
            return self.horizon
        return 50 * (self.n // self.k) * self.plan().tau_prime

    def derived(self) -> dict[str, Any]:
        plan = self.plan()
        return {
            "tau": plan.tau,
            "tau_prime": plan.tau_prime,
            "T": plan.threshold,
            "shuffle_len": plan.shuffle_len if plan.has_shuffle else 0,
            "tau_e": plan.tau_e(self.n, self.k),
            "horizon": self.effective_horizon(),
        }

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class PhaseRecord:
    kind: str
    index: int
    start: int
    end: int
    fresh_per_clique: list[int] = field(default_factory=list)


@dataclass
class RunTrace:
    config: dict[str, Any]
    derived: dict[str, Any]
    phases: list[PhaseRecord] = field(default_factory=list)
    completion_round: int | None = None
    completion_round_strict: int | None = None
    phases_used: int | None = None
    rounds_executed: int = 0
    survivors: list[int] = field(default_factory=list)
    broadcasters: int = 0
    fail_rounds: list[int | None] = field(default_factory=list)
    init_buffer_sizes: list[int] = field(default_factory=list)
    violations: dict[str, int] = field(default_factory=dict)
    aborted: str | None = None
    digest: str = ""
    # level-gated detail
    send_log: list[tuple[int, np.ndarray, np.ndarray]] | None = None
    filler_blocks: list[tuple[int, int]] | None = None
    shuffle_merges: list[tuple[int, np.ndarray, np.ndarray]] | None = None
    snapshots: dict[tuple[str, int], np.ndarray] | None = None
    shuffle_reports: dict[int, dict[str, np.ndarray]] | None = None
    final_first_rx: np.ndarray | None = None
    final_cnt: np.ndarray | None = None
    final_sent: np.ndarray | None = None

    @property
    def complete(self) -> bool:
        return self.completion_round is not None

    def summary(self) -> dict[str, Any]:
        return {
            "record": "summary",
            "completion_round": self.completion_round,
            "completion_round_strict": self.completion_round_strict,
            "phases_used": self.phases_used,
            "rounds_executed": self.rounds_executed,
            "survivors": len(self.survivors),
            "broadcasters": self.broadcasters,
            "violations": dict(sorted(self.violations.items())),
            "aborted": self.aborted,
        }

    def jsonl_records(self) -> list[dict[str, Any]]:
        head = {"record": "config", **self.config, **{f"derived_{k}": v for k, v in self.derived.items()}}
        recs = [head]
        for ph in self.phases:
            recs.append({"record": "phase", **asdict(ph)})
        recs.append(self.summary())
        return recs

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.jsonl_records())


class SimState:
    """Mutable state of one run. Matrices are indexed ``[receiver, origin]``."""

    def __init__(self, config: SimConfig, topology: Topology, plan: PhasePlan, horizon: int) -> None:
        n = topology.node_count
        self.config = config
        self.topology = topology
        self.plan = plan
        self.horizon = horizon
        self.n = n
        self.nodes = np.arange(n, dtype=np.int64)
        self.src, self.dst = topology.directed_arcs()
        self.round = 0
        self.fail_round = fail_rounds(config.seed, n, config.q)
        self.first_rx = np.full((n, n), NEVER, dtype=np.int64)
        np.fill_diagonal(self.first_rx, -1)
        self.cnt = np.eye(n, dtype=np.int64)
        self.sent = np.zeros((n, n), dtype=bool)
        self.override = np.zeros((n, n), dtype=bool)
        self.phasecnt = np.zeros((n, n), dtype=np.int64)
        self.in_r = np.zeros((n, n), dtype=bool)
        self.lead_rank = np.full((n, n), -1, dtype=np.int64)
        self.known_before: np.ndarray | None = None
        self.fresh_before: np.ndarray | None = None
        self.phase: Phase | None = None
        self.queue: PhaseQueue | DynamicBuffer | None = None
        self.finished = False

        self.survivor = self.fail_round >= horizon
        self.broadcaster = self.fail_round > 0
        s = int(self.survivor.sum())
        self.missing = s * s - s
        self.missing_strict = s * int(self.broadcaster.sum()) - int((self.survivor & self.broadcaster).sum())
        self.trace = RunTrace(config.to_dict(), config.derived() | {"horizon": horizon, "tau": plan.tau,
                                                                     "tau_prime": plan.tau_prime, "T": plan.threshold})
        self.trace.survivors = [int(u) for u in np.flatnonzero(self.survivor)]
        self.trace.broadcasters = int(self.broadcaster.sum())
        self.trace.fail_rounds = [None if f == NEVER else int(f) for f in self.fail_round]
        self._hash = hashlib.sha256()
        self._check_completion(0)

    # -- helpers -----------------------------------------------------------

    def alive(self, t: int) -> np.ndarray:
        return self.fail_round > t

    def known(self, t: int | None = None) -> np.ndarray:
        """Membership of R_u at the beginning of round ``t``."""
        return self.first_rx < (self.round if t is None else t)

    def fresh(self, t: int | None = None) -> np.ndarray:
        return self.known(t) & (self.cnt < self.plan.threshold) & ~self.override

    def _check_completion(self, t: int) -> None:
        tr = self.trace
        if tr.completion_round is None and self.missing == 0:
            tr.completion_round = t
            tr.phases_used = self.plan.ranking_phase_of(t - 1) if t > 0 else 0
        if tr.completion_round_strict is None and self.missing_strict == 0:
            tr.completion_round_strict = t

    def _learn(self, flat_new: np.ndarray, t_rx: int) -> None:
        """Record first receptions (unique flat indices) made in round ``t_rx``."""
        n = self.n
        self.first_rx.ravel()[flat_new] = t_rx
        w, v = flat_new // n, flat_new % n
        sw = self.survivor[w]
        self.missing -= int((sw & self.survivor[v]).sum())
        self.missing_strict -= int((sw & self.broadcaster[v]).sum())
        if isinstance(self.queue, DynamicBuffer):
            self.queue.append(w, v)


def init(config: SimConfig, topology: Topology | None = None, plan: PhasePlan | None = None,
         horizon: int | None = None) -> SimState:
    if topology is None:
        topology = build_gnk(config.n, config.k)
    if topology.node_count != config.n:
        raise ValueError("topology size differs from config.n")
    plan = plan or config.plan()
    horizon = horizon or (config.effective_horizon() if config.horizon is None else config.horizon)
    return SimState(config, topology, plan, horizon)


# -- phase hooks ---------------------------------------------------------


def _fresh_per_clique(state: SimState) -> list[int]:
    labels = state.topology.labels
    fresh = state.fresh().sum(axis=1)
    if labels is None:
        return [int(fresh.sum())]
    m = labels.num_cliques
    out = np.zeros(m, dtype=np.int64)
    np.add.at(out, np.asarray(labels.clique_of) - 1, fresh)
    return [int(x) for x in out]


def _begin_phase(state: SimState, ph: Phase) -> None:
    t = state.round
    state.phase = ph
    known = state.known()
    unsent = known & ~state.sent
    tr = state.trace
    if ph.kind == P.ROUND0:
        state.queue = None
    elif ph.kind == P.RANDOM:
        state.queue = PhaseQueue.from_mask(unsent)
        tr.init_buffer_sizes = [int(x) for x in state.queue.initial_size]
    elif ph.kind == P.RANKING:
        n = state.n
        base = n + state.cnt * n + state.nodes[None, :]
        key = np.where(state.lead_rank >= 0, state.lead_rank, base)
        state.queue = PhaseQueue.from_mask(unsent, key, harmonic_weights=True)
        state.lead_rank[:] = -1
        if tr.snapshots is not None:
            tr.snapshots[("start", ph.index)] = state.fresh()
    elif ph.kind == P.SHUFFLE:
        fresh = state.fresh()
        bhat = fresh & ~state.sent
        state.known_before = known
        state.fresh_before = fresh
        state.phasecnt[:] = 0
        state.phasecnt[bhat] = 1
        state.in_r[:] = bhat
        state.queue = PhaseQueue.from_mask(bhat)
    elif ph.kind == P.UNIFORM:
        buf = DynamicBuffer(state.n)
        w, v = np.nonzero(unsent)
        buf.append(w, v)
        state.queue = buf
    tr.phases.append(PhaseRecord(ph.kind, ph.index, ph.start, ph.end, _fresh_per_clique(state)))
    if ph.kind != P.ROUND0 and ph.start == t and not (unsent & state.alive(t)[:, None]).any():
        # nothing left to send anywhere: knowledge can never grow again
        state.finished = True


def _end_phase(state: SimState, ph: Phase) -> None:
    tr = state.trace
    if tr.phases:
        tr.phases[-1].end = state.round
    if ph.kind == P.RANKING and tr.snapshots is not None:
        tr.snapshots[("end", ph.index)] = state.fresh()
    if ph.kind == P.SHUFFLE:
        _shuffle_finalize(state, ph)
        state._check_completion(state.round)
    state.queue = None
    state.phase = None


def _shuffle_finalize(state: SimState, ph: Phase) -> None:
    plan, n = state.plan, state.n
    alive = state.alive(ph.end - 1)
    stale = state.known_before & ~state.fresh_before
    keep = state.in_r & (state.phasecnt >= state.config.c_hat * plan.threshold) & ~stale
    keep &= alive[:, None]
    new = keep & ~state.known_before
    flat = np.flatnonzero(new.ravel())
    if flat.size:
        state._learn(flat, ph.end - 1)
        if state.trace.shuffle_merges is not None:
            state.trace.shuffle_merges.append((ph.end - 1, flat // n, flat % n))

    # uniform selection of min(4 tau, |R|) ids per node, in random rank order
    quota = 4 * plan.tau
    keys = uniforms(state.config.seed, Purpose.SHUFFLE_SELECT, state.nodes[:, None], ph.index, state.nodes[None, :])
    keys = np.where(keep, keys, 2.0)
    order = np.argsort(keys, axis=1, kind="stable")[:, :quota]
    take = np.take_along_axis(keep, order, axis=1)
    rows = np.broadcast_to(state.nodes[:, None], order.shape)
    ranks = np.broadcast_to(np.arange(order.shape[1]), order.shape)
    state.lead_rank[:] = -1
    state.lead_rank[rows[take], order[take]] = ranks[take]
    selected = state.lead_rank >= 0
    known_now = state.known()
    # ids that were fresh but fell under the phasecnt threshold keep their
    # counter-based freshness; every other unselected id is demoted
    exempt = state.fresh_before & ~keep
    state.override = np.where(alive[:, None], known_now & ~selected & ~exempt, state.override)

    if state.trace.shuffle_reports is not None:
        state.trace.shuffle_reports[ph.index] = {
            "keep": keep.copy(),
            "phasecnt": state.phasecnt.copy(),
            "known_before": state.known_before.copy(),
            "in_r": state.in_r.copy(),
            "alive": alive.copy(),
        }
    state.known_before = state.fresh_before = None


# -- rounds --------------------------------------------------------------


def _ensure_phase(state: SimState) -> Phase:
    t = state.round
    if state.phase is None or not (state.phase.start <= t < state.phase.end):
        _begin_phase(state, state.plan.phase_at(t))
    return state.phase  # type: ignore[return-value]


def _deliver(state: SimState, t: int, choice: np.ndarray, alive: np.ndarray, shuffle: bool) -> None:
    n = state.n
    ok = alive[state.src] & alive[state.dst]
    flat = state.dst[ok] * n + choice[state.src[ok]]
    if shuffle:
        np.add.at(state.phasecnt.ravel(), flat, 1)
        state.in_r.ravel()[flat] = True
        return
    np.add.at(state.cnt.ravel(), flat, 1)
    fresh_flat = flat[state.first_rx.ravel()[flat] == NEVER]
    if fresh_flat.size:
        state._learn(np.unique(fresh_flat), t)


def step(state: SimState) -> SimState:
    """Execute exactly one round."""
    t = state.round
    if t >= state.horizon:
        raise RuntimeError("round counter reached the horizon")
    ph = _ensure_phase(state)
    alive = state.alive(t)
    if ph.kind == P.ROUND0:
        picked = np.where(alive, state.nodes, -1)
    else:
        u = uniforms(state.config.seed, _PURPOSE[ph.kind], state.nodes, t)
        picked = state.queue.pop(alive, u)  # type: ignore[union-attr]
    filler = alive & (picked < 0)
    choice = np.where(filler, state.nodes, picked)
    kinds = np.where(filler, FILLER, SHUFFLE_SEND if ph.kind == P.SHUFFLE else SEND)
    kinds = np.where(alive, kinds, -1)

    real = alive & (kinds == SEND)
    if real.any():
        rows = state.nodes[real]
        cols = choice[real]
        if (state.first_rx[rows, cols] >= t).any() or state.sent[rows, cols].any():
            bad = rows[(state.first_rx[rows, cols] >= t) | state.sent[rows, cols]][0]
            raise ContractViolation(f"node {bad} chose message {choice[bad]} outside its send set at round {t}")
        state.sent[rows, cols] = True

    _deliver(state, t, choice, alive, ph.kind == P.SHUFFLE)
    state._hash.update(np.where(alive, choice, -1).tobytes())
    if state.trace.send_log is not None:
        state.trace.send_log.append((t, np.where(alive, choice, -1), kinds))
    state.round = t + 1
    state._check_completion(t + 1)
    if state.round == ph.end:
        _end_phase(state, ph)
    return state


def fast_forward(state: SimState) -> bool:
    """Skip the rest of the phase if every live node is down to fillers.

    Filler packets carry the sender's own message, which every live
    neighbour has known since round 0, so only counters move; they are
    added in bulk. Returns whether any rounds were skipped.
    """
    t = state.round
    ph = _ensure_phase(state)
    if ph.kind == P.ROUND0 or state.queue is None:
        return False
    alive = state.alive(t)
    if not state.queue.exhausted(alive):
        return False
    end = min(ph.end, state.horizon)
    if end <= t:
        return False
    f = state.fail_round
    span = np.minimum(np.minimum(f[state.src], f[state.dst]), end) - t
    ok = span > 0
    flat = state.dst[ok] * state.n + state.src[ok]
    if ph.kind == P.SHUFFLE:
        np.add.at(state.phasecnt.ravel(), flat, span[ok])
        state.in_r.ravel()[flat] = True
    else:
        np.add.at(state.cnt.ravel(), flat, span[ok])
    state._hash.update(np.array([t, end], dtype=np.int64).tobytes())
    if state.trace.filler_blocks is not None:
        state.trace.filler_blocks.append((t, end))
    state.round = end
    if end == ph.end:
        _end_phase(state, ph)
    return True


def _done(state: SimState) -> bool:
    tr = state.trace
    if state.finished or state.round >= state.horizon:
        return True
    return tr.completion_round is not None and tr.completion_round_strict is not None


def run(
    config: SimConfig,
    topology: Topology | None = None,
    plan: PhasePlan | None = None,
    *,
    log_sends: bool = False,
    snapshots: bool = False,
    skip_idle: bool = True,
) -> RunTrace:
    """Run one trial until completion, quiescence or the horizon.

    ``log_sends`` keeps every round's choices (and the final matrices) for
    replay checks; ``snapshots`` keeps freshness matrices at ranking-phase
    boundaries and shuffle filter reports for the property checkers.
    ``skip_idle=False`` disables :func:`fast_forward` (same outcome, slower).
    """
    state = init(config, topology, plan)
    tr = state.trace
    if log_sends:
        tr.send_log, tr.filler_blocks, tr.shuffle_merges = [], [], []
    if snapshots:
        tr.snapshots, tr.shuffle_reports = {}, {}
    try:
        while not _done(state):
            _ensure_phase(state)
            if state.finished:
                break
            if not (skip_idle and fast_forward(state)):
                step(state)
    except ContractViolation as exc:
        logger.error("trial aborted: %s", exc)
        tr.aborted = str(exc)
        tr.violations["contract"] = tr.violations.get("contract", 0) + 1
    tr.rounds_executed = state.round
    if log_sends or snapshots:
        tr.final_first_rx = state.first_rx.copy()
        tr.final_cnt = state.cnt.copy()
        tr.final_sent = state.sent.copy()
    tr.digest = hashlib.sha256(tr.to_jsonl().encode() + state._hash.digest()).hexdigest()
    return tr


def completion_round(trace: RunTrace, strict: bool = False) -> int | None:
    """First round at whose start every survivor knows every survivor's message.

    ``strict`` asks instead for the messages of every node that broadcast in
    round 0.
    """
    return trace.completion_round_strict if strict else trace.completion_round
