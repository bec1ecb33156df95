import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codednet import baselines as bl


def test_reception_prob_matches_fading_draws():
    rng = np.random.default_rng(0)
    gamma = rng.exponential(1.0, 200_000)
    for d in (0.5, 1.0, 2.0):
        mc = np.mean(gamma * d ** -2.0 >= 0.25)
        assert bl.reception_prob(d) == pytest.approx(mc, abs=0.005)


def _simulate_e2e(ps, packets, rng):
    """Data transmissions per packet, resending until an end-to-end ack returns."""
    sent = 0
    for _ in range(packets):
        while True:
            ok = True
            for p in ps:
                sent += 1
                if rng.random() >= p:
                    ok = False
                    break
            if ok and all(rng.random() < p for p in reversed(ps)):
                break
    return sent / packets


def test_end_to_end_retransmission_cost_matches_simulation():
    ps = [0.8, 0.6]
    got = _simulate_e2e(ps, 20_000, np.random.default_rng(1))
    assert bl.path_cost(ps, "e2e_retransmission") == pytest.approx(got, rel=0.03)


def test_path_cost_closed_forms_and_errors():
    assert bl.path_cost([0.5], "path_coding") == pytest.approx(2.0)
    assert bl.path_cost([0.5], "link_retransmission") == pytest.approx(4.0)
    assert bl.path_cost([0.5, 0.5], "e2e_coding") == pytest.approx(1.5 / 0.25)
    assert bl.path_cost([], "path_coding") == 0.0
    with pytest.raises(ValueError):
        bl.path_cost([0.0], "path_coding")
    with pytest.raises(ValueError):
        bl.path_cost([0.5], "flooding")


def test_generators_respect_fanout_and_radius():
    g = bl.gen_geometric(30, 3, "energy_multicast")
    for i in g.net.nodes:
        arcs = g.net.out_arcs(i)
        assert len(arcs) <= 8
        for a in arcs:
            assert all(g.dist(i, j) <= 3.0 for j in a.head)
            assert g.cost[a] == pytest.approx(max(g.dist(i, j) for j in a.head) ** 2)
    u = bl.gen_geometric(5, 3, "fading_unicast")
    assert all(len(a.head) == 4 for a in u.net.arcs)
    with pytest.raises(ValueError):
        bl.gen_geometric(1)
    with pytest.raises(ValueError):
        bl.gen_geometric(5, variant="mesh")


def test_unicast_approaches_are_ordered_per_instance():
    # link retransmission and end-to-end coding only compare on average
    chains = [("full_coding", "path_coding", "link_retransmission"),
              ("path_coding", "e2e_coding", "e2e_retransmission")]
    for k in range(8):
        g = bl.gen_geometric(8, k, "fading_unicast")
        c = {a: bl.unicast_cost(g, 0, 7, a) for a in bl.APPROACHES}
        for chain in chains:
            assert all(c[x] <= c[y] + 1e-9 for x, y in zip(chain, chain[1:]))


def _small_digraph(seed, n=7):
    rng = np.random.default_rng(seed)
    G = nx.gnp_random_graph(n, 0.45, seed=int(seed), directed=True)
    for u, v in G.edges:
        G[u][v]["weight"] = float(rng.integers(1, 6))
    return G


def _steiner_brute(G, s, sinks):
    edges = list(G.edges)
    best = np.inf
    for mask in range(1 << len(edges)):
        sub = [e for k, e in enumerate(edges) if mask >> k & 1]
        H = nx.DiGraph(sub)
        H.add_node(s)
        if all(t in H and nx.has_path(H, s, t) for t in sinks):
            best = min(best, sum(G.edges[e]["weight"] for e in sub))
    return best


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_steiner_exact_matches_enumeration(seed):
    G = _small_digraph(seed, n=5)
    while G.number_of_edges() > 11:
        G.remove_edge(*list(G.edges)[-1])
    sinks = [3, 4]
    assert bl.steiner_exact(G, 0, sinks) == _steiner_brute(G, 0, sinks)


def _tree_reaches(tree, s, sinks):
    H = nx.DiGraph(tree.arcs)
    H.add_node(s)
    return all(t in H and nx.has_path(H, s, t) for t in sinks)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_steiner_bounds(seed):
    G = _small_digraph(seed)
    reach = sorted(nx.descendants(G, 0))
    if len(reach) < 2:
        return
    sinks = reach[:3]
    exact = bl.steiner_exact(G, 0, sinks)
    tree = bl.dst_approx(G, 0, sinks)
    assert _tree_reaches(tree, 0, sinks)
    assert tree.cost >= exact - 1e-9
    assert bl.coded_weight(G, 0, sinks) <= exact + 1e-9
    one = bl.dst_approx(G, 0, sinks[:1])
    assert one.cost == pytest.approx(nx.shortest_path_length(G, 0, sinks[0], weight="weight"))


def test_dst_rejects_bad_input():
    G = nx.DiGraph([(0, 1)])
    G[0][1]["weight"] = 1.0
    G.add_node(2)
    with pytest.raises(ValueError):
        bl.dst_approx(G, 0, [2])
    with pytest.raises(ValueError):
        bl.dst_approx(G, 0, [1], level=0)


def test_mip_tree_is_valid_and_no_cheaper_than_coding():
    for seed in range(5):
        g = bl.gen_geometric(20, seed)
        reach = sorted(bl.reachable(g.net, 0) - {0})
        if len(reach) < 3:
            continue
        sinks = reach[:3]
        tree = bl.mip_multicast(g, 0, sinks)
        assert _tree_reaches(tree, 0, sinks)
        assert bl.coded_energy(g, 0, sinks) <= tree.cost + 1e-9


def test_rocketfuel_round_trip_and_errors(tmp_path):
    G = bl.synthetic_wireline(12, 2)
    path = tmp_path / "weights.intra"
    bl.write_rocketfuel(G, path)
    H = bl.load_rocketfuel(path)
    assert H.number_of_edges() == G.number_of_edges()
    rep = bl.weights_report(H)
    assert rep["strongly_connected"] and 1 <= rep["min_weight"] <= rep["max_weight"] <= 10
    bad = tmp_path / "bad.intra"
    bad.write_text("# header\na b 1\n\na c\n")
    with pytest.raises(bl.MalformedWeights, match="line 4"):
        bl.load_rocketfuel(bad)
    bad.write_text("a b -2\n")
    with pytest.raises(bl.MalformedWeights, match="line 1"):
        bl.load_rocketfuel(bad)
