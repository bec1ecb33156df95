import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codednet.netmodel import (FlowAssignment, Hypernet, LossModel, aloha_relay, arc, cut_value,
                               flow_feasible, flow_path_decompose, format_hypernet, max_flow_lp,
                               min_cut, parse_hypernet, reception_rates)


def _random_digraph(n, seed, p=0.4):
    rng = np.random.default_rng(seed)
    net, z, G = Hypernet(range(n)), {}, nx.DiGraph()
    G.add_nodes_from(range(n))
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < p:
                a = net.add_arc(i, j)
                z[a] = float(rng.integers(1, 6))
                G.add_edge(i, j, capacity=z[a])
    return net, z, G


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 9), st.integers(0, 2 ** 31))
def test_point_to_point_min_cut_matches_networkx(n, seed):
    net, z, G = _random_digraph(n, seed)
    zK = reception_rates(net, LossModel(), z)
    val, Q = min_cut(net, zK, 0, n - 1)
    assert val == pytest.approx(nx.maximum_flow_value(G, 0, n - 1), abs=1e-9)
    assert 0 in Q and n - 1 not in Q
    assert cut_value(zK, Q) == pytest.approx(val)


def test_large_network_uses_lp_cut():
    net, z, G = _random_digraph(24, 4, p=0.15)
    zK = reception_rates(net, LossModel(), z)
    val, Q = min_cut(net, zK, 0, 23)
    assert val == pytest.approx(nx.maximum_flow_value(G, 0, 23), abs=1e-7)
    assert cut_value(zK, Q) == pytest.approx(val, abs=1e-7)


def _random_hypernet(n, seed):
    rng = np.random.default_rng(seed)
    net, z, p = Hypernet(range(n)), {}, {}
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for _ in range(2):
            J = rng.choice(others, int(rng.integers(1, min(3, n - 1) + 1)), replace=False)
            try:
                a = net.add_arc(i, set(J.tolist()))
            except ValueError:
                continue
            z[a] = float(rng.uniform(0.1, 1))
            for j in a.head:
                p[(a, j)] = float(rng.uniform(0.2, 1))
    return net, z, LossModel("iid", p=p)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 8), st.integers(0, 2 ** 31))
def test_hypergraph_max_flow_equals_min_cut(n, seed):
    net, z, lm = _random_hypernet(n, seed)
    zK = reception_rates(net, lm, z)
    rate, flow = max_flow_lp(net, zK, 0, n - 1)
    val, _ = min_cut(net, zK, 0, n - 1)
    assert rate == pytest.approx(val, abs=1e-7)
    assert flow_feasible(net, zK, flow).ok


def test_broadcast_advantage_cut():
    # one transmission heard by either of two relays: the cut around {1}
    # collects every transmission heard by at least one of them
    net = Hypernet([1, 2, 3, 4], [(1, {2, 3}), (2, {4}), (3, {4})])
    lm = LossModel("iid", p={(1, 2): 0.5, (1, 3): 0.5, (2, 4): 1.0, (3, 4): 1.0})
    z = {a: 1.0 for a in net.arcs}
    zK = reception_rates(net, lm, z)
    assert cut_value(zK, {1}) == pytest.approx(0.75)
    assert min_cut(net, zK, 1, 4)[0] == pytest.approx(0.75)


def test_reception_rates_sum():
    net, z, lm = _random_hypernet(5, 1)
    zK = reception_rates(net, lm, z)
    for a in net.arcs:
        miss = np.prod([1 - lm.success(a, j) for j in a.head])
        got = sum(v for (b, _), v in zK.items() if b == a)
        assert got == pytest.approx(z[a] * (1 - miss))


def test_aloha_rates_and_validation():
    net, lm = aloha_relay(9 / 16, 1 / 16, 3 / 16, 3 / 4)
    top, rel = net.arcs
    zK = reception_rates(net, lm, {top: 0.5, rel: 0.5})
    assert zK[(rel, frozenset([3]))] == pytest.approx(0.25 * 0.75)
    assert sum(zK[(top, K)] for K in (frozenset([2]), frozenset([3]), frozenset([2, 3]))) == \
        pytest.approx(0.25 * 13 / 16)
    with pytest.raises(ValueError):
        aloha_relay(0.6, 0.3, 0.3, 0.5)
    with pytest.raises(ValueError):
        reception_rates(net, lm, {top: 1.5})


def test_hyperarc_validation():
    with pytest.raises(ValueError):
        arc(1, set())
    with pytest.raises(ValueError):
        arc(1, {1, 2})
    with pytest.raises(ValueError):
        arc(0, set(range(1, 10)))
    net = Hypernet()
    net.add_arc(1, 2)
    with pytest.raises(ValueError):
        net.add_arc(1, [2])
    with pytest.raises(ValueError):
        min_cut(net, {}, 1, 1)
    with pytest.raises(KeyError):
        min_cut(net, {}, 1, 9)


def test_text_round_trip_and_errors():
    text = "1 -> 2,3 [z=0.5] [p=0.9,0.8]  # broadcast\n2 -> 3 [z=0.25]\n"
    net, z, lm = parse_hypernet(text)
    assert lm.kind == "iid" and len(net.arcs) == 2
    assert lm.success(net.arcs[1], 3) == 1.0
    net2, z2, lm2 = parse_hypernet(format_hypernet(net, z, lm))
    assert [repr(a) for a in net2.arcs] == [repr(a) for a in net.arcs]
    assert {repr(a): v for a, v in z2.items()} == {repr(a): v for a, v in z.items()}
    for bad, where in [("1 -> 2\nfoo\n", "line 2"), ("1 -> 2 [p=0.5,0.5]\n", "line 1"),
                       ("1 -> 2 [p=1.5]\n", "line 1"), ("1 -> 2 [w=1]\n", "line 1"),
                       ("1 -> 2\n1 -> 2\n", "line 2")]:
        with pytest.raises(ValueError, match=where):
            parse_hypernet(bad)


def test_path_decomposition_cancels_cycles():
    flow = {("s", "a"): 2.0, ("a", "t"): 1.0, ("a", "b"): 1.5, ("b", "t"): 1.0,
            ("b", "a"): 0.5}
    paths = flow_path_decompose(flow, "s", "t")
    assert sum(r for _, r in paths) == pytest.approx(2.0)
    assert all(p[0] == "s" and p[-1] == "t" for p, _ in paths)


def test_feasibility_flags_violations():
    net = Hypernet([1, 2], [(1, 2)])
    a = net.arcs[0]
    zK = reception_rates(net, LossModel(), {a: 1.0})
    assert flow_feasible(net, zK, FlowAssignment({(a, 2, 2): 1.0}, 1, {2: 1.0})).ok
    rep = flow_feasible(net, zK, FlowAssignment({(a, 2, 2): 2.0}, 1, {2: 2.0}))
    assert not rep.ok and "capacity" in rep.first
