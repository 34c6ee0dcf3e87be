import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cesar.errors import ConfigError, DuplicateNeighborMessage, UnknownSender
from cesar.maskcrypt import fx_encode
from cesar.protocol import (
    Averaging,
    MaskedModelMsg,
    RoundConfig,
    aggregate_received,
    dpsgd_baseline_round,
    metropolis_hastings_weights,
    prestep_receive,
    prestep_send,
    run_cesar_round,
    run_plain_round_oracle,
    send_masked_models,
)
from cesar.sparsifier import Method, SelectionSpec, framed_size, topk
from cesar.topology import Topology, complete_graph, cycle_graph, gen_regular_graph, view2


def cfg(s=1, alpha=1.0, method=Method.RANDOM, averaging=Averaging.UNIFORM):
    return RoundConfig(s, SelectionSpec(method, alpha), averaging)


def star(leaves):
    return Topology.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def explicit(t, sel, d):
    """Prestep with hand-picked selections shipped as explicit index sets."""
    spec = SelectionSpec(Method.TOPK, 1.0)
    sent = {i: prestep_send(i, sel[i], t, spec, 0, 1) for i in range(t.n)}
    recv = {i: [m for ms in sent.values() for m in ms if m.recipient == i] for i in range(t.n)}
    return {i: prestep_receive(i, sel[i], sent[i], recv[i], d, spec, 0) for i in range(t.n)}


# -- aggregate ---------------------------------------------------------------------


def test_aggregate_worked_example():
    # node 0 with neighbours A=1 and B=2; a mask on index 0 cancels between them
    t = Topology.from_edges(3, [(0, 1), (0, 2)])
    v = fx_encode([2.0, 4.0])
    m = np.array([123456789123], dtype=np.uint64)
    a = MaskedModelMsg(1, 0, np.array([0]), fx_encode([8.0]) + m)
    b = MaskedModelMsg(2, 0, np.array([0, 1]), fx_encode([5.0, 1.0]) - np.concatenate([m, [0]]).astype(np.uint64))
    out = aggregate_received(0, v, [a, b], t)
    assert np.allclose(out, [5.0, 3.0], atol=1e-12)


def test_aggregate_without_messages_keeps_model():
    t = cycle_graph(4)
    v = fx_encode([1.25, -3.5])
    assert np.array_equal(aggregate_received(0, v, [], t), [1.25, -3.5])


def test_aggregate_fills_missing_indices_with_own_values():
    t = Topology.from_edges(3, [(0, 1), (0, 2)])
    v = fx_encode([2.0, 4.0])
    msgs = [MaskedModelMsg(j, 0, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.uint64)) for j in (1, 2)]
    assert np.allclose(aggregate_received(0, v, msgs, t), [2.0, 4.0])


def test_aggregate_rejects_strangers_and_duplicates():
    t = cycle_graph(4)
    v = fx_encode([0.0])
    empty = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.uint64))
    with pytest.raises(UnknownSender):
        aggregate_received(0, v, [MaskedModelMsg(2, 0, *empty)], t)
    with pytest.raises(DuplicateNeighborMessage):
        aggregate_received(0, v, [MaskedModelMsg(1, 0, *empty), MaskedModelMsg(1, 0, *empty)], t)


# -- prestep and masking --------------------------------------------------------


def test_prestep_without_second_degree_neighbours():
    t = Topology.from_edges(2, [(0, 1)])
    spec = SelectionSpec(Method.RANDOM, 1.0)
    assert prestep_send(0, np.arange(4), t, spec, 0, 1) == []
    assert prestep_receive(0, np.arange(4), [], [], 4, spec, 0) == {}


def test_prestep_disjoint_selections_give_empty_domain():
    t = star(2)
    ag = explicit(t, {0: np.arange(6), 1: np.array([0, 1, 2]), 2: np.array([3, 4, 5])}, 6)
    assert ag[1][2].domain.size == 0
    msgs, _ = send_masked_models(1, fx_encode(np.ones(6)), ag[1], t, 1)
    assert msgs[0].kept.size == 0


def test_prestep_full_selection_on_k4():
    t = complete_graph(4)
    ag = explicit(t, {i: np.arange(5) for i in range(4)}, 5)
    for i in range(4):
        assert sorted(ag[i]) == [j for j in range(4) if j != i]
        assert all(np.array_equal(a.domain, np.arange(5)) for a in ag[i].values())
    # both ends of a pair hold the same agreement
    assert ag[0][3] == ag[3][0]


def test_each_of_three_senders_applies_two_masks():
    t = star(3)
    sel = {0: np.arange(4), 1: np.array([2]), 2: np.array([2]), 3: np.array([2])}
    ag = explicit(t, sel, 4)
    for i in (1, 2, 3):
        _, traces = send_masked_models(i, fx_encode(np.full(4, float(i))), ag[i], t, 1, instrument=True)
        assert traces[0].counts[2] == 2
        assert list(traces[0].kept) == [2]


def test_two_selectors_discard_under_s2():
    t = star(3)
    sel = {0: np.arange(4), 1: np.array([1]), 2: np.array([1]), 3: np.array([0])}
    ag = explicit(t, sel, 4)
    for i in (1, 2):
        msgs, traces = send_masked_models(i, fx_encode(np.ones(4)), ag[i], t, 2, instrument=True)
        assert traces[0].counts[1] == 1
        assert msgs[0].kept.size == 0


def test_no_shared_index_gives_empty_message():
    t = star(2)
    ag = explicit(t, {0: np.arange(4), 1: np.array([0]), 2: np.array([3])}, 4)
    msgs, _ = send_masked_models(1, fx_encode(np.ones(4)), ag[1], t, 1)
    assert msgs[0].kept.size == 0 and msgs[0].transmitted


def test_mixed_masking_requirement_rejected():
    with pytest.raises(ConfigError):
        RoundConfig([1, 2, 1], SelectionSpec(Method.RANDOM, 0.5))
    assert RoundConfig([2, 2], SelectionSpec(Method.RANDOM, 0.5)).masking_requirement == 2
    with pytest.raises(ConfigError):
        RoundConfig(0, SelectionSpec(Method.RANDOM, 0.5))


# -- full rounds -------------------------------------------------------------------


def test_k4_full_sharing_averages():
    params = np.random.default_rng(0).normal(size=(4, 4))
    res = run_cesar_round(params, complete_graph(4), cfg(), 0, 5)
    assert np.allclose(res.params, params.mean(axis=0), atol=1e-6)


def test_degree_one_receiver_keeps_own_model():
    t = Topology.from_edges(3, [(0, 1), (1, 2)])
    params = np.random.default_rng(1).normal(size=(3, 6))
    res = run_cesar_round(params, t, cfg(), 0, 5, instrument=True)
    assert np.array_equal(res.params[0], np.round(params[0] * 1e6) / 1e6)
    to_leaf = [m for m in res.trace.messages if m.recipient in (0, 2)]
    assert all(not m.transmitted and m.param_bytes == 0 and m.meta_bytes == 0 for m in to_leaf)


configs = st.fixed_dictionaries({
    "n": st.integers(6, 16),
    "k": st.integers(2, 5),
    "d": st.integers(1, 64),
    "alpha": st.floats(0.05, 1.0),
    "s": st.integers(1, 4),
    "method": st.sampled_from(list(Method)),
    "seed": st.integers(0, 2**40),
    "round_": st.integers(0, 50),
})


@settings(max_examples=60, deadline=None)
@given(configs)
def test_masked_round_equals_plain_oracle(c):
    if c["k"] >= c["n"] or c["n"] * c["k"] % 2:
        return
    t = gen_regular_graph(c["n"], c["k"], c["seed"])
    params = np.random.default_rng(c["seed"]).normal(size=(c["n"], c["d"]))
    rc = cfg(c["s"], c["alpha"], c["method"])
    res = run_cesar_round(params, t, rc, c["round_"], c["seed"])
    ref = run_plain_round_oracle(params, t, rc, c["round_"], c["seed"])
    assert np.array_equal(fx_encode(res.params), fx_encode(ref))
    assert np.array_equal(res.params, ref)


def test_unreachable_requirement_leaves_params_unchanged():
    t = gen_regular_graph(10, 3, 2)
    params = np.random.default_rng(3).normal(size=(10, 8))
    res = run_cesar_round(params, t, cfg(s=3), 0, 1)
    ref = run_plain_round_oracle(params, t, cfg(s=3), 0, 1)
    assert np.array_equal(res.params, ref)
    assert np.allclose(res.params, params, atol=1e-6)
    assert all(r.sent_param_bytes == 0 for r in res.records)


def test_oracle_full_sharing_is_neighbourhood_average():
    t = gen_regular_graph(12, 3, 4)
    params = np.random.default_rng(4).normal(size=(12, 5))
    out = run_plain_round_oracle(params, t, SelectionSpec(Method.RANDOM, 1.0), 0, 1, s=0)
    for i in range(12):
        members = [i, *t.adjacency[i]]
        assert np.allclose(out[i], params[members].mean(axis=0), atol=1e-6)


def test_dpsgd_full_uniform_matches_oracle_with_s0():
    t = gen_regular_graph(14, 4, 8)
    params = np.random.default_rng(8).normal(size=(14, 9))
    spec = SelectionSpec(Method.RANDOM, 1.0)
    base = dpsgd_baseline_round(params, t, spec, Averaging.UNIFORM, 0, 1)
    ref = run_plain_round_oracle(params, t, spec, 0, 1, s=0)
    assert np.allclose(base.params, ref, atol=1e-12)
    assert all(r.sent_protocol_bytes == 0 for r in base.records)
    assert all(r.algorithm == "dpsgd" for r in base.records)


def test_mh_weights_on_regular_graph():
    t = gen_regular_graph(20, 5, 1)
    w = metropolis_hastings_weights(t)
    for i in range(20):
        assert sum(w[i].values()) == pytest.approx(1.0)
        for j in t.adjacency[i]:
            assert w[i][j] == pytest.approx(1 / 6)
    # equal degrees make MH and uniform averaging coincide
    params = np.random.default_rng(1).normal(size=(20, 4))
    spec = SelectionSpec(Method.RANDOM, 1.0)
    a = dpsgd_baseline_round(params, t, spec, Averaging.UNIFORM, 0, 1).params
    b = dpsgd_baseline_round(params, t, spec, Averaging.METROPOLIS_HASTINGS, 0, 1).params
    assert np.allclose(a, b, atol=1e-12)


def test_mh_weights_irregular():
    w = metropolis_hastings_weights(star(3))
    assert w[1][0] == pytest.approx(0.25)
    assert w[1][1] == pytest.approx(0.75)
    assert w[0][0] == pytest.approx(0.25)


def test_byte_accounting_random():
    t = gen_regular_graph(24, 4, 3)
    params = np.random.default_rng(3).normal(size=(24, 50))
    res = run_cesar_round(params, t, cfg(1, 0.5), 0, 9, instrument=True)
    for r in res.records:
        assert r.prestep_messages == len(view2(t, r.node))
        assert r.sent_protocol_bytes == 16 * len(view2(t, r.node))
    for r in res.records:
        mine = [m for m in res.trace.messages if m.sender == r.node]
        assert r.sent_param_bytes == sum(8 * m.kept.size for m in mine)
        assert r.sent_meta_bytes == sum(framed_size(m.kept) for m in mine)
        assert r.kept_fraction == pytest.approx(np.mean([m.kept.size / 50 for m in mine]))


def test_byte_accounting_topk():
    t = gen_regular_graph(24, 4, 3)
    params = np.random.default_rng(3).normal(size=(24, 50))
    res = run_cesar_round(params, t, cfg(1, 0.3, Method.TOPK), 0, 9)
    for r in res.records:
        framed = framed_size(topk(fx_encode(params[r.node]), 0.3))
        assert r.sent_protocol_bytes == len(view2(t, r.node)) * (8 + framed)


def test_topk_alpha_zero_costs_framing_only():
    t = gen_regular_graph(12, 3, 3)
    params = np.random.default_rng(3).normal(size=(12, 20))
    res = run_cesar_round(params, t, cfg(1, 0.0, Method.TOPK), 0, 9)
    for r in res.records:
        assert r.sent_protocol_bytes == len(view2(t, r.node)) * (8 + 4)
        assert r.sent_param_bytes == 0


def test_round_is_deterministic_and_round_dependent():
    t = gen_regular_graph(12, 3, 3)
    params = np.random.default_rng(3).normal(size=(12, 40))
    a = run_cesar_round(params, t, cfg(1, 0.5), 2, 9).params
    b = run_cesar_round(params, t, cfg(1, 0.5), 2, 9).params
    c = run_cesar_round(params, t, cfg(1, 0.5), 3, 9).params
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_rejects_wrong_state_shape():
    with pytest.raises(ValueError):
        run_cesar_round(np.zeros((3, 2)), complete_graph(4), cfg(), 0, 1)
