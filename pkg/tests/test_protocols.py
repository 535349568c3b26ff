from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from vcongest import protocols as P
from vcongest.protocols import (
    DynamicBuffer,
    PhasePlan,
    PhaseQueue,
    build_plan,
    is_fresh,
    is_pioneer,
    rank_weights,
    ranking_function,
    sample_and_nullify,
    uniform_pick,
    weighted_pick,
)
from vcongest.rng import NodeStream, Purpose, uniforms
from vcongest.topology import build_gnk


def exact_weights(b: int) -> list[Fraction]:
    h = sum(Fraction(1, i) for i in range(1, b + 1))
    return [1 / (r * h) for r in range(1, b + 1)]


def test_plan_lengths_for_n64():
    plan = build_plan(64, "ranking")
    assert (plan.tau, plan.tau_prime, plan.threshold) == (12, 3456, 6.0)
    assert plan.tau_e(64, 8) == 2 * 8 * 3456
    assert build_plan(64, "ranking_shuffle").shuffle_len == 96


def test_plan_overrides_and_minimums():
    assert build_plan(1, "ranking").tau == 1
    plan = build_plan(64, "ranking_shuffle", tau=10)
    assert plan.tau == 10 and plan.tau_prime == 8 * 10 * 36
    with pytest.raises(ValueError):
        PhasePlan("flood", 1, 1, 8, 1)


def test_ranking_phases_abut_without_shuffles():
    plan = build_plan(16, "ranking")
    assert plan.ranking_start(1) == 1 + plan.tau
    for p in range(1, 5):
        assert plan.ranking_end(p) == plan.ranking_start(p + 1)


def test_phase_sequence_with_shuffles():
    plan = build_plan(16, "ranking_shuffle", tau=3, tau_prime=10)
    kinds = [(ph.kind, ph.index, ph.start, ph.end) for ph in plan.phases(50)]
    assert kinds[:5] == [
        (P.ROUND0, 0, 0, 1),
        (P.RANDOM, 0, 1, 4),
        (P.RANKING, 1, 4, 14),
        (P.SHUFFLE, 1, 14, 38),
        (P.RANKING, 2, 38, 48),
    ]
    assert plan.ranking_phase_of(20) == 1
    assert plan.ranking_phase_of(38) == 2
    assert plan.ranking_phase_of(2) == 0


def test_zero_length_random_phase_is_skipped():
    plan = PhasePlan("ranking", 4, 10, 0, 0)
    assert plan.phase_at(1).kind == P.RANKING
    assert [ph.kind for ph in plan.phases(12)] == [P.ROUND0, P.RANKING, P.RANKING]


def test_uniform_plan_is_one_open_phase():
    plan = build_plan(16, "uniform")
    assert plan.phase_at(0).kind == P.ROUND0
    assert plan.phase_at(10**6).kind == P.UNIFORM


@pytest.mark.parametrize("b", [1, 2, 3, 7])
def test_rank_weights_match_exact_fractions(b):
    got = rank_weights(b)
    for w, exact in zip(got, exact_weights(b)):
        assert abs(w - float(exact)) <= 1e-15


def test_ranking_function_orders_by_count_then_id():
    dist = ranking_function({9: 3, 4: 1, 2: 3, 7: 0})
    assert dist.order == [7, 4, 2, 9]
    assert ranking_function({}).order == []
    assert list(ranking_function({5: 1}).weights) == [1.0]
    np.testing.assert_allclose(ranking_function({1: 0, 2: 0}).weights, [2 / 3, 1 / 3], atol=1e-15)


def test_shuffle_selection_takes_leading_ranks():
    dist = ranking_function({1: 0, 2: 5, 3: 1, 4: 2}, leading=[4, 2, 99])
    assert dist.order == [4, 2, 1, 3]


def test_nullify_renormalizes_remaining_weights():
    dist = ranking_function({10: 0, 11: 1, 12: 2})

    class First:
        def random(self):
            return 0.0

    assert sample_and_nullify(dist, First()) == 10
    np.testing.assert_allclose(dist.probabilities(), [0, 3 / 5, 2 / 5], atol=1e-15)
    assert dist.probability_of(11) == pytest.approx(0.6)
    rng = NodeStream(0)
    assert {sample_and_nullify(dist, rng), sample_and_nullify(dist, rng)} == {11, 12}
    assert sample_and_nullify(dist, rng) is None


def test_single_entry_distribution_empties():
    dist = ranking_function({3: 4})
    assert sample_and_nullify(dist, NodeStream(1)) == 3
    assert dist.remaining() == 0


def test_first_pick_frequencies_match_harmonic_weights():
    trials = 100_000
    u = uniforms(77, Purpose.TEST, np.arange(trials))
    w = np.broadcast_to(rank_weights(3), (trials, 3))
    picks = weighted_pick(w, u)
    freq = np.bincount(picks, minlength=3) / trials
    exact = np.array([6 / 11, 3 / 11, 2 / 11])
    sigma = np.sqrt(exact * (1 - exact) / trials)
    assert np.all(np.abs(freq - exact) <= 3 * sigma)


def test_scalar_sampler_matches_weights():
    trials = 20_000
    counts = {0: 0, 1: 0, 2: 0}
    rng = NodeStream(5)
    for _ in range(trials):
        counts[sample_and_nullify(ranking_function({0: 0, 1: 1, 2: 2}), rng)] += 1
    exp = np.array([6 / 11, 3 / 11, 2 / 11]) * trials
    assert stats.chisquare([counts[i] for i in range(3)], exp).pvalue > 0.001


def test_uniform_pick():
    assert uniform_pick([3], NodeStream(0), own=9) == 3
    assert uniform_pick([], NodeStream(0), own=9) == 9
    rng = NodeStream(11)
    counts = np.zeros(4)
    for _ in range(100_000):
        counts[uniform_pick([0, 1, 2, 3], rng, own=-1)] += 1
    assert stats.chisquare(counts).pvalue > 0.001


def test_freshness_threshold_is_strict():
    assert is_fresh(4, 5.0)
    assert not is_fresh(5, 5.0)
    assert not is_fresh(1, 5.0, overridden=True)


def test_pioneer_definition():
    lab = build_gnk(16, 4).labels
    u = lab.clique_members(3)[0]
    v = lab.clique_members(1)[0]
    assert is_pioneer(lab, u, v, 1)
    assert lab.layer_of[u] == lab.layer_of[v]
    assert is_pioneer(lab, u, v, 1, direction=1)
    assert not is_pioneer(lab, u, v, 1, direction=-1)
    assert not is_pioneer(lab, u, lab.clique_members(3)[1], 1)
    for w in lab.clique_members(1) + lab.clique_members(2):
        assert not any(is_pioneer(lab, w, x, 1, direction=1) for x in range(16))
    with pytest.raises(ValueError):
        is_pioneer(lab, u, v, 0)


def test_phase_queue_pops_each_entry_once():
    mask = np.array([[True, False, True, True], [False, False, False, False], [True, True, True, True]])
    q = PhaseQueue.from_mask(mask, harmonic_weights=True)
    assert list(q.initial_size) == [3, 0, 4]
    seen: list[list[int]] = [[], [], []]
    active = np.ones(3, dtype=bool)
    for t in range(5):
        out = q.pop(active, uniforms(1, Purpose.TEST, np.arange(3), t))
        for u in range(3):
            if out[u] >= 0:
                seen[u].append(int(out[u]))
    assert sorted(seen[0]) == [0, 2, 3]
    assert seen[1] == []
    assert sorted(seen[2]) == [0, 1, 2, 3]
    assert q.exhausted(active)


def test_phase_queue_orders_by_key():
    mask = np.ones((1, 3), dtype=bool)
    q = PhaseQueue.from_mask(mask, np.array([[5, 1, 3]]), harmonic_weights=True)
    assert list(q.slots[0]) == [1, 2, 0]
    np.testing.assert_allclose(q.weights[0], rank_weights(3))


def test_inactive_rows_do_not_pop():
    q = PhaseQueue.from_mask(np.ones((2, 2), dtype=bool))
    out = q.pop(np.array([True, False]), np.zeros(2))
    assert out[1] == -1 and q.left[1] == 2


def test_dynamic_buffer_appends_and_pops():
    buf = DynamicBuffer(3)
    buf.append(np.array([0, 0, 2]), np.array([1, 2, 0]))
    buf.append(np.array([0]), np.array([0]))
    got = []
    for t in range(4):
        out = buf.pop(np.ones(3, dtype=bool), uniforms(2, Purpose.TEST, np.arange(3), t))
        got.append(out)
    assert sorted(int(r[0]) for r in got if r[0] >= 0) == [0, 1, 2]
    assert [int(r[2]) for r in got] == [0, -1, -1, -1]
    assert buf.exhausted(np.ones(3, dtype=bool))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3000))
def test_rank_weights_sum_to_one_and_decrease(b):
    w = rank_weights(b)
    assert abs(math.fsum(w) - 1.0) <= 1e-12
    assert np.all(np.diff(w) < 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 12), st.lists(st.integers(0, 11), max_size=11, unique=True))
def test_nullifying_never_lowers_remaining_probabilities(b, drop):
    dist = ranking_function({i: i for i in range(b)})
    initial = dist.probabilities().copy()
    for i in drop:
        if i < b and dist.remaining() > 1:
            dist.nullified[i] = True
    live = ~dist.nullified
    assert np.all(dist.probabilities()[live] >= initial[live] - 1e-15)
    assert abs(dist.probabilities().sum() - 1.0) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=1, max_size=8), st.floats(0, 1, exclude_max=True))
def test_weighted_pick_lands_on_positive_weight(weights, u):
    w = np.array(weights)
    if w.sum() <= 0:
        w[0] = 1.0
    i = int(weighted_pick(w[None, :], np.array([u]))[0])
    assert w[i] > 0
