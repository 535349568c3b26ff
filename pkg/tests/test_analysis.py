from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcongest import protocols as P
from vcongest.analysis import (
    aggregate,
    check_invariants,
    check_properties,
    completion_from_knowledge,
    expected_init_buffer,
    fault_tolerance_report,
    replay,
    scaling_fit,
    summarize,
)
from vcongest.engine import SimConfig, run
from vcongest.protocols import PhasePlan
from vcongest.topology import build_gnk, complete_graph


def traced(cfg: SimConfig, plan: PhasePlan | None = None, **kw):
    topo = build_gnk(cfg.n, cfg.k)
    plan = plan or cfg.plan()
    return run(cfg, topo, plan, **kw), topo, plan


def test_fault_free_ranking_run_satisfies_properties():
    tr, topo, plan = traced(SimConfig(64, 8, protocol="ranking", seed=5), snapshots=True)
    rep = check_properties(tr, topo, plan)
    assert rep.checked_phases >= 6
    assert rep.clean, rep.per_phase


def test_shuffle_run_satisfies_properties():
    tr, topo, plan = traced(SimConfig(64, 8, protocol="ranking_shuffle", tau=10, seed=2), snapshots=True)
    rep = check_properties(tr, topo, plan)
    assert rep.checked_phases >= 6 and rep.clean, rep.per_phase


def test_single_clique_properties_are_vacuous():
    tr, topo, plan = traced(SimConfig(8, 8, protocol="ranking"), snapshots=True)
    rep = check_properties(tr, topo, plan)
    assert rep.clean and rep.checked_phases == 0
    assert tr.final_first_rx.max() < 1  # all-known after round 0


def test_skipping_random_phase_breaks_property_3():
    cfg = SimConfig(64, 8, protocol="ranking", seed=1)
    plan = cfg.plan()
    broken = PhasePlan(plan.algorithm, plan.tau, plan.tau_prime, plan.shuffle_len, 0)
    tr, topo, _ = traced(cfg, broken, snapshots=True)
    rep = check_properties(tr, topo, broken)
    assert rep.per_phase[1]["p3"] > 0
    honest, topo, plan = traced(cfg, snapshots=True)
    assert check_properties(honest, topo, plan).per_phase[1]["p3"] == 0


def test_property_checker_preconditions():
    cfg = SimConfig(16, 4, protocol="ranking")
    tr, topo, plan = traced(cfg, snapshots=True)
    with pytest.raises(ValueError):
        check_properties(tr, complete_graph(16), plan)
    with pytest.raises(ValueError):
        check_properties(run(cfg), topo, plan)
    faulty, topo, plan = traced(SimConfig(16, 4, protocol="ranking", q=0.5), snapshots=True)
    with pytest.raises(ValueError):
        check_properties(faulty, topo, plan)


def test_expected_initial_buffers():
    assert expected_init_buffer(build_gnk(4, 4)) == [3] * 4
    assert expected_init_buffer(build_gnk(8, 4)) == [4] * 8
    assert expected_init_buffer(build_gnk(12, 4)) == [4] * 4 + [5] * 4 + [4] * 4


def test_init_buffer_check_flags_mismatch():
    tr, topo, plan = traced(SimConfig(12, 4, protocol="ranking"), log_sends=True)
    assert check_invariants(tr, topo, plan)["init_buff"] == 0
    tr.init_buffer_sizes[0] += 1
    assert check_invariants(tr, topo, plan)["init_buff"] == 1


def test_invariant_checker_catches_tampered_log():
    tr, topo, plan = traced(SimConfig(12, 4, protocol="ranking", seed=3), log_sends=True)
    assert not any(check_invariants(tr, topo, plan).values())
    tr.final_cnt[0, 0] += 1
    assert check_invariants(tr, topo, plan)["conservation"] == 1


def test_distance_bound_needs_shuffle_threshold_above_two():
    # c_hat * T = 2 lets a pioneer with phasecnt 2 through the filter
    loose, topo, plan = traced(SimConfig(16, 4, protocol="ranking_shuffle", seed=0), log_sends=True)
    assert plan.tau == 8
    assert check_invariants(loose, topo, plan)["distance"] > 0
    tight, topo, plan = traced(SimConfig(16, 4, protocol="ranking_shuffle", tau=10, seed=0), log_sends=True)
    assert check_invariants(tight, topo, plan)["distance"] == 0


cases = st.tuples(
    st.sampled_from(P.ALGORITHMS),
    st.sampled_from([(4, 4), (6, 3), (8, 4), (12, 4), (12, 3), (10, 2), (12, 2)]),
    st.integers(0, 2**31),
    st.sampled_from([0.0, 0.0, 2e-3]),
)


@settings(max_examples=40, deadline=None)
@given(cases)
def test_replay_agrees_with_engine(case):
    protocol, (n, k), seed, q = case
    tau = 10 if protocol == "ranking_shuffle" else None
    cfg = SimConfig(n, k, protocol=protocol, seed=seed, q=q, tau=tau, horizon=8000)
    tr, topo, plan = traced(cfg, log_sends=True)
    inv = check_invariants(tr, topo, plan)
    assert inv["conservation"] == inv["non_repetition"] == inv["phase_separation"] == 0
    assert inv["distance"] == 0
    rep = replay(tr, topo, plan)
    if tr.completion_round is not None:
        assert completion_from_knowledge(rep.first_rx, tr.survivors) == tr.completion_round
    stripped = replay(tr, topo, plan, strip_fillers=True)
    assert stripped.first_rx == rep.first_rx


def test_scaling_fit_on_synthetic_linear_data():
    ns = [64, 128, 256, 512]
    fit = scaling_fit(ns, [3.0 * n for n in ns])
    assert abs(fit.slope - 1.0) <= 0.05
    assert all(abs(r - 2.0) < 1e-9 for r in fit.doubling_ratios)
    flat = scaling_fit([8, 16, 32], [1.0, 1.0, 1.0])
    assert abs(flat.slope) < 1e-9


def test_single_clique_rounds_do_not_grow():
    ns = [4, 8, 16]
    means = [np.mean([run(SimConfig(n, n, protocol="uniform", seed=s)).completion_round for s in range(3)]) for n in ns]
    assert abs(scaling_fit(ns, means).slope) < 0.05


def test_scaling_fit_rejects_thin_data():
    with pytest.raises(ValueError):
        scaling_fit([1, 2], [1.0, 2.0])
    with pytest.raises(ValueError):
        scaling_fit([1, 2, 4], [1.0, 2.0, 4.0], trials=[30, 30, 5])


def test_fault_tolerance_without_failures_is_perfect():
    rows = fault_tolerance_report(16, 4, [0.0], range(3))
    assert rows[0].success_ranking == rows[0].success_shuffle == 1.0
    assert "alg2=1.000" in rows[0].format()


def test_summary_and_aggregate():
    topo = build_gnk(16, 4)
    summaries = []
    for proto in ("uniform", "ranking"):
        for seed in range(4):
            cfg = SimConfig(16, 4, protocol=proto, seed=seed)
            summaries.append(summarize(run(cfg, topo, snapshots=True), topo, cfg.plan()))
    res = aggregate(summaries)
    assert [r.protocol for r in res.rows] == ["ranking", "uniform"]
    row = res.row("uniform", 16, 4)
    assert row.trials == 4 and row.success_rate == 1.0
    assert row.rounds_per_diameter == pytest.approx(row.mean_rounds / 4)
    assert row.rounds_per_n_over_sqrt_k == pytest.approx(row.mean_rounds / 8)
    assert res.row("ranking", 16, 4).mean_phases == 2.0
    assert summaries[-1].properties_checked


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False))
def test_aggregate_ignores_trial_order(rnd: random.Random):
    topo = build_gnk(16, 4)
    base = [
        summarize(run(SimConfig(16, 4, protocol=p, seed=s, q=q), topo), topo, SimConfig(16, 4, protocol=p).plan(), check=False)
        for p in ("uniform", "ranking")
        for s in range(3)
        for q in (0.0, 1e-3)
    ]
    shuffled = base[:]
    rnd.shuffle(shuffled)
    assert aggregate(shuffled) == aggregate(base)
