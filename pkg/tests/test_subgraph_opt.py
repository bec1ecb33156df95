import itertools
import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codednet import subgraph_opt as so
from codednet.acceptance import nested_instance
from codednet.netmodel import Hypernet, LossModel, flow_feasible, min_cut, reception_rates


def _digraph_instance(n, seed, p=0.45):
    rng = np.random.default_rng(seed)
    net, cost, cap, G = Hypernet(range(n)), {}, {}, nx.DiGraph()
    for i, j in itertools.permutations(range(n), 2):
        if rng.random() < p:
            a = net.add_arc(i, j)
            cost[a] = int(rng.integers(1, 6))
            cap[a] = int(rng.integers(1, 4))
            G.add_edge(i, j, weight=cost[a], capacity=cap[a])
    return net, cost, cap, G


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 8), st.integers(0, 2 ** 31))
def test_unicast_lp_equals_min_cost_flow(n, seed):
    net, cost, cap, G = _digraph_instance(n, seed)
    G.add_nodes_from(range(n))
    spec = so.MulticastSpec(0, [n - 1], 2.0, cost, capacity=cap)
    sol = so.solve_reference(so.build_lossless(net, spec))
    try:
        G.nodes[0]["demand"], G.nodes[n - 1]["demand"] = -2, 2
        want = nx.min_cost_flow_cost(G)
    except nx.NetworkXUnfeasible:
        assert sol.status == "infeasible"
        return
    assert sol.status == "optimal"
    assert sol.cost == pytest.approx(want, abs=1e-7)
    assert sol.duality_gap < 1e-6


def _butterfly():
    edges = [(1, 2), (1, 3), (2, 4), (3, 4), (2, 6), (3, 7), (4, 5), (5, 6), (5, 7)]
    net = Hypernet(range(1, 8), edges)
    unit = {a: 1.0 for a in net.arcs}
    return net, unit


def test_butterfly_coded_multicast_uses_every_link_once():
    net, unit = _butterfly()
    spec = so.MulticastSpec(1, [6, 7], 2.0, unit, capacity=unit)
    sol = so.solve_reference(so.build_lossless(net, spec))
    assert sol.cost == pytest.approx(9.0)
    assert all(v == pytest.approx(1.0) for v in sol.z.values())


def test_multicast_between_unicast_and_steiner_bounds():
    rng = np.random.default_rng(7)
    for _ in range(10):
        net, cost, _, G = _digraph_instance(7, int(rng.integers(2 ** 31)), p=0.5)
        reach = nx.descendants(G, 0) if 0 in G else set()
        if len(reach) < 3:
            continue
        sinks = sorted(rng.choice(sorted(reach), 3, replace=False).tolist())
        spec = so.MulticastSpec(0, sinks, 1.0, cost)
        coded = so.solve_reference(so.build_lossless(net, spec)).cost
        paths = [nx.shortest_path_length(G, 0, t, weight="weight") for t in sinks]
        assert coded >= max(paths) - 1e-9
        assert coded <= sum(paths) + 1e-9


def test_lossy_single_link_needs_rate_over_success():
    net = Hypernet([1, 2], [(1, 2)])
    a = net.arcs[0]
    lm = LossModel("iid", p={(a, 2): 0.8})
    sol = so.solve_reference(so.build_lossy(net, lm, so.MulticastSpec(1, [2], 0.4, {a: 1.0})))
    assert sol.z[a] == pytest.approx(0.5)


def test_lossy_solution_supports_rate_by_min_cut():
    net = Hypernet([1, 2, 3, 4], [(1, {2, 3}), (2, {4}), (3, {4}), (1, {4})])
    lm = LossModel("iid", p={(net.arcs[0], 2): 0.6, (net.arcs[0], 3): 0.7,
                             (net.arcs[1], 4): 0.9, (net.arcs[2], 4): 0.9,
                             (net.arcs[3], 4): 0.2})
    cost = dict(zip(net.arcs, [1.0, 1.0, 1.0, 1.5]))
    spec = so.MulticastSpec(1, [4], 1.0, cost)
    sol = so.solve_reference(so.build_lossy(net, lm, spec))
    assert min_cut(net, reception_rates(net, lm, sol.z), 1, 4)[0] >= 1.0 - 1e-7


def test_convex_cost_interpolation():
    net = Hypernet([1, 2], [(1, 2)])
    a = net.arcs[0]
    spec = so.MulticastSpec(1, [2], 0.5, convex={a: lambda z: z ** 2})
    sol = so.solve_reference(so.build_lossless(net, spec))
    assert sol.cost == pytest.approx(0.25, abs=1e-3)
    assert so.cost_of(sol.z, spec) == pytest.approx(0.25, abs=1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_nested_form_matches_hyperarc_form(seed):
    g, spec = nested_instance(seed)
    full = so.solve_reference(so.build_lossless(g.net, spec))
    lp = so.build_nested(g.net, spec)
    nest = so.solve_reference(lp)
    assert nest.cost == pytest.approx(full.cost, rel=1e-6)
    pairs = {k: v for k, v in nest.x.items()}
    z = so.recover_z(pairs, lp.reach, spec.sinks)
    assert so.cost_of(z, spec) <= nest.cost + 1e-7
    flow = so.recover_x(pairs, z, lp.reach, spec)
    zK = reception_rates(g.net, LossModel(), z)
    assert flow_feasible(g.net, zK, flow, tol=1e-6).ok


def test_nested_reach_validation():
    net = Hypernet([1, 2, 3], [(1, {2}), (1, {3})])
    with pytest.raises(ValueError):
        so.NestedReach(net)
    net = Hypernet([1, 2, 3], [(1, {2}), (1, {2, 3})])
    with pytest.raises(ValueError):
        so.NestedReach(net, {net.arcs[0]: 2.0, net.arcs[1]: 1.0})
    reach = so.NestedReach(net, {net.arcs[0]: 1.0, net.arcs[1]: 3.0})
    assert reach.shell == {(1, 2): 1, (1, 3): 2}
    assert reach.increments({net.arcs[0]: 1.0, net.arcs[1]: 3.0})[net.arcs[1]] == 2.0


def test_multi_connection_single_session_matches_lossy():
    net = Hypernet([1, 2, 3, 4], [(1, {2, 3}), (2, {4}), (3, {4})])
    lm = LossModel("iid", p={(net.arcs[0], 2): 0.5, (net.arcs[0], 3): 0.5,
                             (net.arcs[1], 4): 0.9, (net.arcs[2], 4): 0.8})
    cost = {a: 1.0 for a in net.arcs}
    spec = so.MulticastSpec(1, [4], 0.3, cost)
    one = so.solve_reference(so.build_multi_connection(net, lm, [spec]))
    ref = so.solve_reference(so.build_lossy(net, lm, spec))
    assert one.cost == pytest.approx(ref.cost)


def test_multi_connection_sharing_bounds():
    net, unit = _butterfly()
    a = so.MulticastSpec(1, [6], 1.0, unit)
    b = so.MulticastSpec(1, [7], 1.0, unit)
    joint = so.solve_reference(so.build_multi_connection(net, LossModel(), [a, b])).cost
    solo = [so.solve_reference(so.build_lossless(net, s)).cost for s in (a, b)]
    # separate connections cannot share coded packets, unlike one multicast
    multicast = so.solve_reference(so.build_lossless(
        net, so.MulticastSpec(1, [6, 7], 1.0, unit))).cost
    assert joint == pytest.approx(sum(solo))
    assert multicast <= joint + 1e-9
    assert "x[1][7]" in json.dumps(so.solve_reference(
        so.build_multi_connection(net, LossModel(), [a, b])).to_json())


def test_spec_validation():
    net, unit = _butterfly()
    for bad in [so.MulticastSpec(9, [6]), so.MulticastSpec(1, [9])]:
        with pytest.raises(KeyError):
            so.build_lossless(net, bad)
    for bad in [so.MulticastSpec(1, []), so.MulticastSpec(1, [1]),
                so.MulticastSpec(1, [6], -1.0), so.MulticastSpec(1, [6], 1.0, {net.arcs[0]: -1})]:
        with pytest.raises(ValueError):
            so.build_lossless(net, bad)
    with pytest.raises(ValueError):
        so.build_multi_connection(net, LossModel(), [])


def test_infeasible_capacity_reported():
    net = Hypernet([1, 2], [(1, 2)])
    a = net.arcs[0]
    sol = so.solve_reference(so.build_lossless(net, so.MulticastSpec(1, [2], 2.0, {a: 1.0},
                                                                   capacity={a: 1.0})))
    assert sol.status == "infeasible"


def test_lm_norm_and_smoothing():
    assert so.lm_norm([3.0, 4.0], 2) == pytest.approx(5.0)
    assert so.lm_norm([1.0, 2.0, 3.0], 1) == pytest.approx(6.0)
    assert so.lm_norm([1.0, 2.0, 3.0], 200) == pytest.approx(3.0, rel=1e-2)
    assert so.lm_norm([], 4) == 0.0
    a = Hypernet([1, 2], [(1, 2)]).arcs[0]
    out = so.lm_smooth({a: {"t1": {2: 3.0}, "t2": {2: 4.0}}}, 2)
    assert out[a] == pytest.approx(5.0)


def test_aloha_solution_is_on_the_feasible_boundary():
    s = so.solve_aloha_relay(9 / 16, 1 / 16, 3 / 16, 3 / 4, 1 / 8)
    g1 = s.z1 * (1 - s.z2) * (13 / 16) - 1 / 8
    g2 = s.z1 * (1 - s.z2) * (4 / 16) + (1 - s.z1) * s.z2 * 0.75 - 1 / 8
    assert min(g1, g2) >= -1e-9 and min(abs(g1), abs(g2)) < 1e-6
    assert s.cost <= s.grid_cost + 1e-9
    with pytest.raises(ValueError):
        so.solve_aloha_relay(9 / 16, 1 / 16, 3 / 16, 3 / 4, 0.9)


def test_lp_text_and_json():
    net, unit = _butterfly()
    lp = so.build_lossless(net, so.MulticastSpec(1, [6, 7], 2.0, unit, capacity=unit))
    text = so.lp_text(lp)
    assert text.startswith("minimize") and text.rstrip().endswith("end")
    assert len(lp.names) == lp.n_vars
    doc = json.loads(so.solution_json(so.solve_reference(lp)))
    assert doc["status"] == "optimal" and doc["cost"] == pytest.approx(9.0)
