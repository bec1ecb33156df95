import csv

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from codednet import dist_opt as do
from codednet import subgraph_opt as so
from codednet.acceptance import energy_instance


def _threshold_projection(u, s, iters=200):
    """Projection by bisection on the shift d in sum(max(u + d, 0)) = s."""
    lo, hi = -u.max() - 1.0, s - u.min() + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(u + mid, 0).sum() > s:
            hi = mid
        else:
            lo = mid
    return np.maximum(u + 0.5 * (lo + hi), 0)


@settings(max_examples=200)
@given(arrays(float, st.integers(1, 8), elements=st.floats(-10, 10)), st.floats(0, 20))
def test_projection_matches_bisection(u, s):
    v = do.simplex_project(u, s)
    assert np.all(v >= 0)
    assert v.sum() == pytest.approx(s, abs=1e-9)
    assert np.allclose(v, _threshold_projection(u, s), atol=1e-8)


@settings(max_examples=100)
@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.floats(-5, 5)))
def test_row_projection_agrees_with_single(U):
    s = np.linspace(0.5, 2.0, U.shape[0])
    V = do.simplex_project_rows(U, s)
    for k in range(U.shape[0]):
        assert np.allclose(V[k], do.simplex_project(U[k], s[k]))


def test_projection_of_a_simplex_point_is_itself_and_errors():
    v = np.array([0.2, 0.5, 0.3])
    assert np.allclose(do.simplex_project(v, 1.0), v)
    with pytest.raises(ValueError):
        do.simplex_project(v, -1.0)
    with pytest.raises(ValueError):
        do.simplex_project([], 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2 ** 31))
def test_bellman_ford_distances(n, seed):
    rng = np.random.default_rng(seed)
    G = nx.gnp_random_graph(n, 0.4, seed=int(seed), directed=True)
    tails = np.array([u for u, _ in G.edges], dtype=int)
    heads = np.array([v for _, v in G.edges], dtype=int)
    w = rng.integers(0, 5, len(tails)).astype(float)
    for (u, v), wt in zip(G.edges, w):
        G[u][v]["weight"] = wt
    d, pred, rounds = do.bellman_ford(n, tails, heads, w, 0)
    ref = nx.single_source_bellman_ford_path_length(G, 0)
    for v in range(n):
        assert d[v] == (ref[v] if v in ref else np.inf)
        if v in ref and v != 0:
            path = do.path_edges(pred, heads, tails, 0, v)
            assert sum(w[e] for e in path) == pytest.approx(ref[v])
    assert rounds <= n


def test_bellman_ford_tie_break_and_errors():
    # two zero-cost routes to 2: the direct edge has fewer hops
    tails, heads = np.array([0, 1, 0]), np.array([1, 2, 2])
    d, pred, _ = do.bellman_ford(3, tails, heads, np.array([0.0, 0.0, 0.0]), 0)
    assert do.path_edges(pred, heads, tails, 0, 2) == [2]
    with pytest.raises(ValueError):
        do.bellman_ford(2, np.array([0, 1]), np.array([1, 0]), np.array([-1.0, -1.0]), 0)
    d, pred, _ = do.bellman_ford(3, np.array([0]), np.array([1]), np.array([1.0]), 0)
    with pytest.raises(ValueError):
        do.path_edges(pred, np.array([1]), np.array([0]), 0, 2)


def test_step_rules():
    assert do.StepRule()(1) == 1.0
    assert do.StepRule(alpha=0.5)(4) == pytest.approx(0.5)
    assert do.StepRule("harmonic", a=2, b=1, c=1)(3) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        do.StepRule("constant")(1)


def test_recovery_weights():
    xs = [np.array([float(k)]) for k in range(1, 6)]
    u, t, w = do.Recovery("uniform"), do.Recovery("theta"), do.Recovery("window", window=2)
    for k, x in enumerate(xs, 1):
        ux, tx, wx = u.push(x), t.push(x, 1.0 / k), w.push(x)
    assert ux[0] == pytest.approx(3.0)
    th = np.array([1.0 / k for k in range(1, 6)])
    assert tx[0] == pytest.approx(float(th @ np.arange(1, 6)) / th.sum())
    assert wx[0] == pytest.approx(4.5)
    with pytest.raises(ValueError):
        do.Recovery("median")


@pytest.mark.parametrize("seed", range(3))
def test_subgradient_bounds_bracket_the_optimum(seed):
    g, s, T = energy_instance(20, 3, seed)
    spec = so.MulticastSpec(s, T, 1.0, g.cost)
    opt = so.solve_reference(so.build_nested(g.net, spec)).cost
    tr = do.subgradient(g.net, spec, 60, recoveries=("window", "uniform", "theta"))
    assert max(tr.dual) <= opt + 1e-7                      # weak duality
    for kind in ("window", "uniform", "theta"):
        assert min(tr.primal[kind]) >= opt - 1e-7          # averaged flows stay feasible
    assert max(tr.violation) < 1e-9
    assert tr.primal["window"][-1] <= 1.25 * opt
    assert all(a < b for a, b in zip(tr.messages, tr.messages[1:]))


def test_subgradient_stopping_rule_and_csv(tmp_path):
    g, s, T = energy_instance(15, 2, 4)
    spec = so.MulticastSpec(s, T, 1.0, g.cost)
    tr = do.subgradient(g.net, spec, 500, tol=1e-3)
    assert len(tr.dual) < 500
    path = tmp_path / "trace.csv"
    do.write_trace_csv(path, tr)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["n", "dual_value", "primal_cost", "feasibility_violation", "messages"]
    assert len(rows) == len(tr.dual) + 1
    with pytest.raises(ValueError):
        do.subgradient(g.net, spec, 0)


def test_flow_index_incidence():
    net, spec, _ = do.layered_instance(1)
    fi = do.FlowIndex(net, spec)
    assert np.allclose(fi.incidence.sum(axis=0), 0)
    assert np.allclose(fi.supply.sum(axis=1), 0)
    assert fi.arc_sum.sum() == fi.n_edges


def test_primal_dual_reaches_smoothed_optimum():
    net, spec, a = do.layered_instance(2)
    f = lambda z: a * z ** 2
    df = lambda z: 2 * a * z
    pd = do.PrimalDual(net, spec, 4, f, df)
    st_, n = pd.run(pd.init(3, np.random.default_rng(0)), 40_000, tol=1e-12)
    assert n < 40_000
    assert pd.kkt_residual(st_).max() < 1e-6
    ref, _ = so.solve_smoothed(net, spec, 4, f, df)
    assert np.allclose(pd.cost(st_), ref, rtol=1e-6)
    pts = do.PrimalDual.normalized(st_)
    assert np.abs(pts - pts[0]).max() < 1e-6
