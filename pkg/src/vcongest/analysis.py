"""Verdicts on traces: property checkers, replay oracles and sweep statistics."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from . import protocols as P
from .engine import FILLER, NEVER, SEND, RunTrace, SimConfig, run
from .protocols import PhasePlan
from .topology import Topology, build_gnk, distance_matrix

__all__ = [
    "PropertyReport",
    "TrialSummary",
    "SweepRow",
    "SweepResult",
    "ScalingFit",
    "FaultToleranceRow",
    "Replay",
    "check_properties",
    "check_invariants",
    "replay",
    "completion_from_knowledge",
    "summarize",
    "aggregate",
    "scaling_fit",
    "fault_tolerance_report",
]

PROPERTIES = ("p1", "p2", "p3", "p4")


@dataclass
class PropertyReport:
    """Per-phase violation counts; a count is the number of offending items."""

    per_phase: dict[int, dict[str, int]] = field(default_factory=dict)
    checked_phases: int = 0

    def total(self, prop: str) -> int:
        return sum(v.get(prop, 0) for v in self.per_phase.values())

    def totals(self) -> dict[str, int]:
        return {p: self.total(p) for p in PROPERTIES}

    @property
    def clean(self) -> bool:
        return not any(self.totals().values())


def _known_at(trace: RunTrace, t: int) -> np.ndarray:
    return trace.final_first_rx < t


def check_properties(trace: RunTrace, topology: Topology, plan: PhasePlan) -> PropertyReport:
    """Check Properties 1-4 at every ranking phase the trace reached.

    Needs a fault-free run on a labeled G(n, k) recorded with snapshots.
    P1-P3 are read at t_p, P4 at the end of ranking phase p. With shuffle
    phases the clause of P2 demanding that every C_{i-p} message is still
    fresh is skipped: a shuffle may demote messages it did not select.
    """
    labels = topology.labels
    if labels is None:
        raise ValueError("property checks need a labeled G(n, k) topology")
    if trace.snapshots is None or trace.final_first_rx is None:
        raise ValueError("trace was recorded without snapshots")
    if any(f is not None for f in trace.fail_rounds):
        raise ValueError("property checks apply to fault-free runs only")

    n, k, m = topology.node_count, labels.k, labels.num_cliques
    tau, T = plan.tau, plan.threshold
    clique = np.asarray(labels.clique_of)
    layer = np.asarray(labels.layer_of)
    gap = clique[:, None] - clique[None, :]  # clique(u) - clique(v), indexed [u, v]
    same_layer = layer[:, None] == layer[None, :]
    report = PropertyReport()

    p = 1
    while ("start", p) in trace.snapshots:
        t_p = plan.ranking_start(p)
        known = _known_at(trace, t_p)
        fresh = trace.snapshots[("start", p)]
        counts = dict.fromkeys(PROPERTIES, 0)

        for sign in (1, -1):
            # pioneers flowing in direction ``sign``: origin p+1 cliques behind
            pio = known & (gap == sign * (p + 1))
            for i in range(1, m + 1):
                rows = clique == i
                holders = pio[rows].sum(axis=0)  # per origin, nodes of C_i holding it
                origins = np.flatnonzero(holders)
                if origins.size > 3 * tau:
                    counts["p1"] += int(origins.size - 3 * tau)
                for v in origins:
                    u_rows = np.flatnonzero(rows & pio[:, v])
                    if holders[v] != 1 or layer[u_rows[0]] != layer[v]:
                        counts["p1"] += 1

            # P2: fresh census per node for this direction
            behind = fresh & (sign * gap > 0)
            allowed = behind & (sign * gap == p)
            pioneer_ok = behind & (sign * gap == p + 1) & same_layer
            per_node = behind.sum(axis=1)
            counts["p2"] += int(np.maximum(per_node - 4 * tau, 0).sum())
            counts["p2"] += int((behind & ~allowed & ~pioneer_ok).sum())
            counts["p2"] += int(np.maximum(pioneer_ok.sum(axis=1) - 1, 0).sum())
            if not plan.has_shuffle:
                counts["p2"] += int((known & (sign * gap == p) & ~fresh).sum())

            # P3: every origin p cliques behind is fresh in >= T nodes of C_i
            for i in range(1, m + 1):
                j = i - sign * p
                if not 1 <= j <= m:
                    continue
                rows = clique == i
                per_origin = fresh[rows][:, clique == j].sum(axis=0)
                counts["p3"] += int((per_origin < T).sum())

        # own-clique messages are never fresh at t_p
        counts["p2"] += int((fresh & (gap == 0)).sum())

        end = trace.snapshots.get(("end", p))
        if end is not None:
            known_end = _known_at(trace, plan.ranking_end(p))
            near = np.abs(gap) <= p
            counts["p4"] += int((near & ~(known_end & ~end)).sum())

        report.per_phase[p] = counts
        report.checked_phases += 1
        p += 1
    return report


# -- replay oracle -------------------------------------------------------


@dataclass
class Replay:
    cnt: dict[tuple[int, int], int]
    first_rx: dict[tuple[int, int], int]
    sends: list[tuple[int, int, int, int]]  # (round, node, origin, kind)


def replay(trace: RunTrace, topology: Topology, plan: PhasePlan, strip_fillers: bool = False) -> Replay:
    """Recompute counters and first receptions from the delivery log alone.

    Plain loops over the adjacency lists; independent of the engine's
    vectorized bookkeeping. Shuffle rounds only feed shuffle counters, so
    they are skipped here and the logged shuffle merges are applied instead.
    """
    if trace.send_log is None:
        raise ValueError("trace was recorded without a delivery log")
    n = topology.node_count
    fail = [NEVER if f is None else f for f in trace.fail_rounds]
    cnt: dict[tuple[int, int], int] = {(u, u): 1 for u in range(n)}
    first: dict[tuple[int, int], int] = {(u, u): -1 for u in range(n)}
    sends: list[tuple[int, int, int, int]] = []

    events: list[tuple[int, int, Any]] = []
    for t, choice, kinds in trace.send_log:
        events.append((t, 1, (choice, kinds)))
    for start, end in trace.filler_blocks or []:
        events.append((start, 1, ("block", end)))
    for t, w, v in trace.shuffle_merges or []:
        events.append((t, 2, (w, v)))
    events.sort(key=lambda e: (e[0], e[1]))

    def deliver(t: int, u: int, msg: int) -> None:
        for w in topology.adjacency[u]:
            if fail[w] > t:
                cnt[(w, msg)] = cnt.get((w, msg), 0) + 1
                first.setdefault((w, msg), t)

    for t, tag, payload in events:
        if tag == 2:
            for w, v in zip(*payload):
                first.setdefault((int(w), int(v)), t)
            continue
        if isinstance(payload[0], str):
            end = payload[1]
            if strip_fillers or plan.phase_at(t).kind == P.SHUFFLE:
                continue
            for r in range(t, end):
                for u in range(n):
                    if fail[u] > r:
                        deliver(r, u, u)
            continue
        choice, kinds = payload
        shuffle = plan.phase_at(t).kind == P.SHUFFLE
        for u in range(n):
            c, kind = int(choice[u]), int(kinds[u])
            if c < 0:
                continue
            sends.append((t, u, c, kind))
            if shuffle or (strip_fillers and kind == FILLER):
                continue
            deliver(t, u, c)
    return Replay(cnt, first, sends)


def completion_from_knowledge(first_rx: dict[tuple[int, int], int], survivors: Sequence[int]) -> int:
    """Completion round implied by first-reception times (0 when vacuous)."""
    worst = 0
    for w in survivors:
        for v in survivors:
            if (w, v) not in first_rx:
                return -1
            worst = max(worst, first_rx[(w, v)] + 1)
    return worst


def expected_init_buffer(topology: Topology) -> list[int]:
    labels = topology.labels
    m = labels.num_cliques
    if m == 1:
        return [labels.k - 1] * topology.node_count
    return [labels.k + (1 if 1 < c < m else 0) for c in labels.clique_of]


def check_invariants(trace: RunTrace, topology: Topology, plan: PhasePlan) -> dict[str, int]:
    """Exact trace invariants; returns violation counts by name.

    Phase separation, non-repetition and conservation need the delivery log
    (conservation is replayed only for n <= 16). The initial-buffer census
    needs a fault-free labeled run; the distance bound holds on any run.
    """
    out = {"phase_separation": 0, "non_repetition": 0, "conservation": 0, "init_buff": 0, "distance": 0}
    n = topology.node_count

    if trace.send_log is not None:
        rep = replay(trace, topology, plan)
        seen: set[tuple[int, int]] = set()
        for t, u, c, kind in rep.sends:
            if kind != SEND:
                continue
            if (u, c) in seen:
                out["non_repetition"] += 1
            seen.add((u, c))
            rx = rep.first_rx.get((u, c), NEVER)
            bound = t if plan.algorithm == "uniform" else plan.phase_at(t).start
            if rx >= bound:
                out["phase_separation"] += 1
        if n <= 16 and trace.final_cnt is not None:
            for w in range(n):
                for v in range(n):
                    if rep.cnt.get((w, v), 0) != int(trace.final_cnt[w, v]):
                        out["conservation"] += 1
                    fr = int(trace.final_first_rx[w, v])
                    if rep.first_rx.get((w, v), NEVER) != fr:
                        out["conservation"] += 1

    fault_free = all(f is None for f in trace.fail_rounds)
    if fault_free and topology.labels is not None and trace.init_buffer_sizes:
        exp = expected_init_buffer(topology)
        out["init_buff"] = sum(a != b for a, b in zip(trace.init_buffer_sizes, exp))

    if trace.final_first_rx is not None and plan.algorithm != "uniform":
        dist = distance_matrix(topology)
        far = np.where(dist < 0, n + 1, dist)
        p = 1
        while plan.ranking_start(p) <= trace.rounds_executed:
            known = trace.final_first_rx < plan.ranking_start(p)
            out["distance"] += int((known & (far > p + 1)).sum())
            p += 1
    return out


# -- summaries and aggregation -------------------------------------------


@dataclass
class TrialSummary:
    protocol: str
    n: int
    k: int
    q: float
    seed: int
    completion_round: int | None
    completion_round_strict: int | None
    phases: int | None
    survivors: int
    success: bool
    rounds_executed: int
    p1_violations: int = 0
    p2_violations: int = 0
    p3_violations: int = 0
    p4_violations: int = 0
    phase_separation_violations: int = 0
    distance_violations: int = 0
    properties_checked: bool = False
    aborted: str | None = None
    digest: str = ""
    config: dict[str, Any] = field(default_factory=dict)
    derived: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrialSummary":
        return cls(**data)

    @property
    def property_clean(self) -> bool:
        return self.properties_checked and not (
            self.p1_violations or self.p2_violations or self.p3_violations or self.p4_violations
        )


def summarize(trace: RunTrace, topology: Topology, plan: PhasePlan, check: bool = True) -> TrialSummary:
    cfg = trace.config
    s = TrialSummary(
        protocol=cfg["protocol"],
        n=cfg["n"],
        k=cfg["k"],
        q=cfg["q"],
        seed=cfg["seed"],
        completion_round=trace.completion_round,
        completion_round_strict=trace.completion_round_strict,
        phases=trace.phases_used,
        survivors=len(trace.survivors),
        success=trace.complete and trace.aborted is None,
        rounds_executed=trace.rounds_executed,
        aborted=trace.aborted,
        digest=trace.digest,
        config=dict(cfg),
        derived=dict(trace.derived),
    )
    fault_free = all(f is None for f in trace.fail_rounds)
    if check and fault_free and topology.labels is not None and trace.snapshots is not None and plan.algorithm != "uniform":
        rep = check_properties(trace, topology, plan)
        s.p1_violations, s.p2_violations, s.p3_violations, s.p4_violations = (rep.total(p) for p in PROPERTIES)
        s.properties_checked = True
    if check and trace.final_first_rx is not None:
        inv = check_invariants(trace, topology, plan)
        s.phase_separation_violations = inv["phase_separation"]
        s.distance_violations = inv["distance"]
    return s


@dataclass
class SweepRow:
    protocol: str
    n: int
    k: int
    q: float
    alpha: float
    d: float
    c_hat: float
    tau: int | None
    trials: int
    success_rate: float
    mean_rounds: float | None
    median_rounds: float | None
    p95_rounds: float | None
    rounds_per_diameter: float | None
    rounds_per_n_over_sqrt_k: float | None
    mean_phases: float | None


@dataclass
class SweepResult:
    rows: list[SweepRow]

    def row(self, protocol: str, n: int, k: int, q: float = 0.0) -> SweepRow:
        for r in self.rows:
            if (r.protocol, r.n, r.k, r.q) == (protocol, n, k, q):
                return r
        raise KeyError((protocol, n, k, q))


def aggregate(summaries: Iterable[TrialSummary]) -> SweepResult:
    """Group by cell (protocol, n, k, q, alpha, d, c_hat, tau); input order is irrelevant."""
    groups: dict[tuple, list[TrialSummary]] = defaultdict(list)
    for s in summaries:
        c = s.config
        tau = -1 if c.get("tau") is None else c["tau"]
        groups[(s.protocol, s.n, s.k, s.q, c.get("alpha", 2.0), c.get("d", 1.0), c.get("c_hat", 0.5), tau)].append(s)
    rows = []
    for key in sorted(groups):
        items = sorted(groups[key], key=lambda s: s.seed)
        protocol, n, k, q, alpha, d, c_hat, tau = key
        rounds = np.array([s.completion_round for s in items if s.completion_round is not None], dtype=float)
        phases = [s.phases for s in items if s.phases is not None and s.success]
        has = rounds.size > 0
        mean = float(rounds.mean()) if has else None
        rows.append(
            SweepRow(
                protocol=protocol,
                n=n,
                k=k,
                q=q,
                alpha=alpha,
                d=d,
                c_hat=c_hat,
                tau=None if tau < 0 else tau,
                trials=len(items),
                success_rate=sum(s.success for s in items) / len(items),
                mean_rounds=mean,
                median_rounds=float(np.median(rounds)) if has else None,
                p95_rounds=float(np.percentile(rounds, 95)) if has else None,
                rounds_per_diameter=mean / (n / k) if has else None,
                rounds_per_n_over_sqrt_k=mean / (n / math.sqrt(k)) if has else None,
                mean_phases=float(np.mean(phases)) if phases else None,
            )
        )
    return SweepResult(rows)


@dataclass
class ScalingFit:
    slope: float
    doubling_ratios: list[float]


def scaling_fit(ns: Sequence[int], means: Sequence[float], trials: Sequence[int] | None = None, min_trials: int = 30) -> ScalingFit:
    """Least-squares slope of log(mean rounds) against log(n), plus per-doubling ratios.

    A ratio between consecutive grid points is normalized to one doubling of n.
    """
    if len(ns) < 3 or len(ns) != len(means):
        raise ValueError("scaling fit needs at least three (n, mean) points")
    if trials is not None and min(trials) < min_trials:
        raise ValueError(f"scaling fit needs at least {min_trials} trials per point")
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(means, dtype=float))
    slope = float(np.polyfit(x, y, 1)[0])
    ratios = []
    for (n0, m0), (n1, m1) in zip(zip(ns, means), zip(ns[1:], means[1:])):
        ratios.append(float((m1 / m0) ** (1.0 / math.log2(n1 / n0))))
    return ScalingFit(slope, ratios)


@dataclass
class FaultToleranceRow:
    q: float
    trials: int
    success_ranking: float
    success_shuffle: float
    strict_ranking: float
    strict_shuffle: float
    mean_failures: float

    def format(self) -> str:
        return (
            f"q={self.q:.3e} trials={self.trials} alg1={self.success_ranking:.3f} "
            f"alg2={self.success_shuffle:.3f} (all-broadcaster: {self.strict_ranking:.3f} / "
            f"{self.strict_shuffle:.3f}) mean crashed nodes={self.mean_failures:.2f}"
        )


def fault_tolerance_report(
    n: int,
    k: int,
    qs: Sequence[float],
    seeds: Sequence[int],
    alpha: float = 2.0,
    d: float = 1.0,
    horizon: int | None = None,
) -> list[FaultToleranceRow]:
    """Survivor-to-survivor success of both ranking algorithms on paired seeds.

    The horizon defaults to tau_e = 2 (n/k) tau', the window the failure
    bound q <= 1/(32 tau_e) is calibrated for.
    """
    topo = build_gnk(n, k)
    rows = []
    for q in qs:
        res: dict[str, list[RunTrace]] = {}
        for proto in ("ranking", "ranking_shuffle"):
            base = SimConfig(n, k, protocol=proto, alpha=alpha, d=d, q=q)
            h = horizon or base.plan().tau_e(n, k)
            res[proto] = [run(SimConfig(n, k, protocol=proto, alpha=alpha, d=d, q=q, seed=s, horizon=h), topo) for s in seeds]
        a, b = res["ranking"], res["ranking_shuffle"]
        rows.append(
            FaultToleranceRow(
                q=q,
                trials=len(seeds),
                success_ranking=float(np.mean([t.complete for t in a])),
                success_shuffle=float(np.mean([t.complete for t in b])),
                strict_ranking=float(np.mean([t.completion_round_strict is not None for t in a])),
                strict_shuffle=float(np.mean([t.completion_round_strict is not None for t in b])),
                mean_failures=float(np.mean([n - len(t.survivors) for t in b])),
            )
        )
    return rows
