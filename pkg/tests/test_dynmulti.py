import csv

import numpy as np
import pytest

from codednet import dynmulti as dm


def test_four_node_join_grows_then_shrinks():
    p = dm.four_node()
    solver = dm.StaticSolver(p)
    z = p.as_dict([1, 0, 1, 0])
    z1, c1 = dm.myopic_policy(p, z, {3, 4}, solver)
    z2, c2 = dm.myopic_policy(p, z1, {3, 4}, solver)
    assert (dm.four_node_vec(p, z1), c1) == ((1.0, 1.0, 1.0, 1.0), "increase")
    assert (dm.four_node_vec(p, z2), c2) == ((0.0, 1.0, 0.0, 1.0), "decrease")
    assert dm.admissible(p, z, {3, 4}, z1) and dm.admissible(p, z1, {3, 4}, z2)
    # jumping straight to the new optimum mixes directions
    assert not dm.admissible(p, z, {3, 4}, z2)


def test_cone_classification():
    p = dm.four_node()
    z = p.as_dict([1, 0, 1, 0])
    assert dm.cone_of(p, z, z) == "stay"
    assert dm.cone_of(p, z, p.as_dict([1, 1, 1, 0])) == "increase"
    assert dm.cone_of(p, z, p.as_dict([1, 0, 0, 0])) == "decrease"
    assert dm.cone_of(p, z, p.as_dict([0, 1, 1, 0])) == "mixed"


def test_greedy_mode_and_empty_group():
    p = dm.four_node()
    z = p.as_dict([1, 0, 1, 0])
    z1, cone = dm.myopic_policy(p, z, {3, 4}, mode="greedy")
    assert cone == "increase" and dm.supports(p, z1, {3, 4})
    z0, cone = dm.myopic_policy(p, z, set())
    assert cone == "decrease" and not any(z0.values())
    with pytest.raises(ValueError):
        dm.myopic_policy(p, z, {4}, mode="lazy")


def test_butterfly_variant_routing_cannot_extend_but_coding_can():
    b = dm.buttvar()
    arcs = [(a.tail, next(iter(a.head))) for a in b.net.arcs]
    assert dm.tree_extensions(arcs, {e: 1.0 for e in arcs}, dm.BUTTVAR_TREES, 1, {7, 8}) == []
    # sanity: the trees do reach their original sinks
    assert dm.tree_extensions(arcs, {e: 1.0 for e in arcs}, dm.BUTTVAR_TREES, 1, {6, 8})
    used = set(dm.BUTTVAR_TREES[0]) | set(dm.BUTTVAR_TREES[1])
    z0 = {a: float((a.tail, next(iter(a.head))) in used) for a in b.net.arcs}
    assert dm.supports(b, z0, {6, 8})
    z1, cone = dm.myopic_policy(b, z0, {7, 8})
    assert cone == "increase" and dm.admissible(b, z0, {7, 8}, z1)


def test_absorption_probability_matches_simulation():
    proc = dm.MembershipProcess(0.3, 0.2)
    n_max, k0, horizon = 4, 2, 15
    want = proc.absorbed_by(k0, n_max, horizon)
    rng = np.random.default_rng(0)
    runs, hits = 20_000, 0
    for _ in range(runs):
        T = frozenset(range(k0))
        for _ in range(horizon):
            T = dm.membership_step(proc, T, range(n_max), rng)
        hits += not T
    assert hits / runs == pytest.approx(want, abs=4 * np.sqrt(want * (1 - want) / runs))


def test_size_chain_is_stochastic_and_validated():
    P = dm.MembershipProcess(0.4, 0.3).size_chain(5)
    assert np.allclose(P.sum(axis=1), 1) and P[0, 0] == 1
    for bad in [(-0.1, 0.2), (0.7, 0.5)]:
        with pytest.raises(ValueError):
            dm.MembershipProcess(*bad)


@pytest.mark.parametrize("seed", range(4))
def test_episodes_keep_serving_surviving_sinks(seed):
    prob = dm.random_dyn_problem(7, seed)
    solver = dm.StaticSolver(prob)
    res = dm.episode_cost(prob, dm.MembershipProcess(0.3, 0.2), {1, 2}, 40, seed=seed,
                          solver=solver)
    assert res.continuity_ok and res.admissible_ok
    assert res.cost == pytest.approx(sum(r[2] for r in res.trace))
    assert all((r[1] == 0) == (r[2] == 0) for r in res.trace)


def test_broadcast_baseline_holds_one_subgraph(tmp_path):
    prob = dm.random_dyn_problem(6, 3)
    solver = dm.StaticSolver(prob)
    proc = dm.MembershipProcess(0.3, 0.2)
    my = dm.episode_cost(prob, proc, {1}, 30, seed=5, solver=solver)
    pol = dm.broadcast_policy(prob, solver)
    bc = dm.episode_cost(prob, proc, {1}, 30, seed=5, solver=solver, policy=pol, z0=pol.start)
    assert [r[1] for r in my.trace] == [r[1] for r in bc.trace]
    assert bc.continuity_ok and bc.admissible_ok
    assert dm.supports(prob, pol.start, prob.others)
    fb = prob.f(pol.start)
    assert all(r[2] == pytest.approx(fb if r[1] else 0.0) for r in bc.trace)
    path = tmp_path / "ep.csv"
    dm.write_episode_csv(path, my)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["epoch", "|T|", "cost", "cone", "min_cut_ok"]
    assert len(rows) == my.epochs + 1
