"""Routed baselines and random instance generators for the comparison studies.

* lossy wireless unicast: five ways of delivering packets over fading links
* wireline multicast: a directed Steiner tree approximation
* wireless energy multicast: the broadcast incremental power tree, pruned
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .netmodel import Hypernet, LossModel
from .subgraph_opt import (MulticastSpec, NestedReach, build_lossless, build_lossy,
                           build_nested, solve_reference)

SNR_THRESHOLD = 0.25
ATTENUATION = 2.0


def reception_prob(d, beta: float = SNR_THRESHOLD, alpha: float = ATTENUATION):
    """P(gamma d^-alpha >= beta) for unit-mean exponential fading gamma."""
    return np.exp(-beta * np.asarray(d, float) ** alpha)


@dataclass
class GeometricNet:
    pos: np.ndarray
    net: Hypernet
    loss: LossModel | None = None
    cost: dict = field(default_factory=dict)
    radius: float | None = None

    def dist(self, i, j) -> float:
        return float(np.linalg.norm(self.pos[i] - self.pos[j]))


def _nearest(pos, i, radius, fanout):
    d = np.linalg.norm(pos - pos[i], axis=1)
    order = [int(j) for j in np.argsort(d, kind="stable") if j != i]
    if radius is not None:
        order = [j for j in order if d[j] <= radius]
    return order[:fanout], d


def gen_geometric(n: int, seed=0, variant: str = "energy_multicast", radius: float = 3.0,
                  side: float | None = None, fanout: int = 8) -> GeometricNet:
    """Random node placement in a square.

    fading_unicast:   side sqrt(n) (unit density); node i has one hyperarc to
                      its nearest min(n - 1, fanout) nodes, each hearing with
                      prob exp(-d^2 / 4) independently.
    energy_multicast: side 10 by default; node i has nested hyperarcs to its
                      1, 2, ... nearest nodes within ``radius`` (at most
                      ``fanout``), costing the squared distance to the farthest.
    """
    if n < 2:
        raise ValueError("need at least two nodes")
    rng = np.random.default_rng(seed)
    if variant == "fading_unicast":
        side = side or math.sqrt(n)
        pos = rng.uniform(0, side, (n, 2))
        net = Hypernet(range(n))
        p = {}
        for i in range(n):
            near, d = _nearest(pos, i, None, min(n - 1, fanout))
            net.add_arc(i, set(near))
            for j in near:
                p[(i, j)] = float(reception_prob(d[j]))
        return GeometricNet(pos, net, LossModel("iid", p=p))
    if variant == "energy_multicast":
        side = side or 10.0
        pos = rng.uniform(0, side, (n, 2))
        net = Hypernet(range(n))
        cost = {}
        for i in range(n):
            near, d = _nearest(pos, i, radius, fanout)
            for m in range(1, len(near) + 1):
                a = net.add_arc(i, set(near[:m]))
                cost[a] = float(d[near[m - 1]] ** 2)
        return GeometricNet(pos, net, LossModel("lossless"), cost, radius)
    raise ValueError(f"unknown variant {variant!r}")


def reachable(net: Hypernet, s) -> set:
    seen, stack = {s}, [s]
    while stack:
        u = stack.pop()
        for a in net.out_arcs(u):
            for j in a.head:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
    return seen


# ---------------------------------------------------------------------------
# unicast


APPROACHES = ("e2e_retransmission", "e2e_coding", "link_retransmission", "path_coding",
              "full_coding")


def path_cost(ps, approach: str) -> float:
    """Expected data transmissions per delivered packet along a path.

    ps: link success probabilities in path order.  Acknowledgements travel
    the reverse hop(s) with the same success probability and are not counted.
    """
    ps = np.asarray(ps, float)
    if ps.size == 0:
        return 0.0
    if np.any(ps <= 0):
        raise ValueError("zero-probability link")
    reach = np.concatenate([[1.0], np.cumprod(ps)[:-1]])   # prob the packet gets to hop l
    whole = float(np.prod(ps))
    if approach == "path_coding":
        return float(np.sum(1.0 / ps))
    if approach == "link_retransmission":
        return float(np.sum(1.0 / ps ** 2))
    if approach == "e2e_coding":
        return float(reach.sum() / whole)
    if approach == "e2e_retransmission":
        return float(reach.sum() / whole ** 2)
    raise ValueError(f"no path cost for {approach!r}")


def _link_graph(g: GeometricNet) -> nx.DiGraph:
    G = nx.DiGraph()
    G.add_nodes_from(g.net.nodes)
    for a in g.net.arcs:
        for j in a.head:
            G.add_edge(a.tail, j, p=g.loss.success(a, j))
    return G


def _best_path(G, s, t, weight):
    for u, v, d in G.edges(data=True):
        d["w"] = weight(d["p"])
    return nx.shortest_path(G, s, t, weight="w")


def unicast_cost(g: GeometricNet, s, t, approach: str) -> float:
    """Expected transmissions per packet for one of the five approaches.

    End-to-end approaches route over the most reliable path (fewest source
    transmissions); the others route to minimise their own total.
    """
    if approach == "full_coding":
        spec = MulticastSpec(s, [t], 1.0, {a: 1.0 for a in g.net.arcs})
        sol = solve_reference(build_lossy(g.net, g.loss, spec))
        if sol.status != "optimal":
            raise ValueError(f"full coding LP {sol.status}")
        return sol.cost
    G = _link_graph(g)
    weight = {"path_coding": lambda p: 1.0 / p,
              "link_retransmission": lambda p: 1.0 / p ** 2,
              "e2e_coding": lambda p: -math.log(p),
              "e2e_retransmission": lambda p: -math.log(p)}[approach]
    path = _best_path(G, s, t, weight)
    return path_cost([G[u][v]["p"] for u, v in zip(path, path[1:])], approach)


# ---------------------------------------------------------------------------
# directed Steiner tree


@dataclass
class TreeSolution:
    arcs: list           # (parent, child) pairs
    cost: float
    root: object = None

    def parents(self) -> dict:
        return {v: u for u, v in self.arcs}


def _tree_from_edges(G: nx.DiGraph, edges, s, sinks) -> TreeSolution:
    """Shortest-path tree of the edge union, pruned to what feeds a sink."""
    H = nx.DiGraph()
    H.add_node(s)
    for u, v in edges:
        H.add_edge(u, v, weight=G[u][v]["weight"])
    _, paths = nx.single_source_dijkstra(H, s)
    keep = set()
    for t in sinks:
        p = paths[t]
        keep.update(zip(p, p[1:]))
    arcs = sorted(keep, key=lambda e: (str(e[0]), str(e[1])))
    return TreeSolution(arcs, float(sum(G[u][v]["weight"] for u, v in arcs)), s)


class _Closure:
    def __init__(self, G: nx.DiGraph):
        self.G = G
        self.dist, self.paths = {}, {}

    def get(self, v):
        if v not in self.dist:
            self.dist[v], self.paths[v] = nx.single_source_dijkstra(self.G, v)
        return self.dist[v], self.paths[v]


def _level1(cl: _Closure, k, r, X):
    """Shortest paths from r to its k nearest terminals of X."""
    d, p = cl.get(r)
    near = sorted((x for x in X if x in d), key=lambda x: (d[x], str(x)))[:k]
    edges = set()
    for x in near:
        edges.update(zip(p[x], p[x][1:]))
    return edges, set(near)


def _edge_cost(G, edges):
    return float(sum(G[u][v]["weight"] for u, v in edges))


def _recursive_greedy(cl: _Closure, level, k, r, X):
    G = cl.G
    if level == 1:
        return _level1(cl, k, r, X)
    X = set(X)
    edges, covered = set(), set()
    while k > 0 and X:
        dr, pr = cl.get(r)
        best = None
        for v in sorted(dr, key=str):
            dv, _ = cl.get(v)
            term = sorted((dv[x] for x in X if x in dv))
            if not term:
                continue
            pref = np.cumsum(term)
            for kk in range(1, min(k, len(term)) + 1):
                dens = (dr[v] + pref[kk - 1]) / kk
                if best is None or dens < best[0] - 1e-12:
                    best = (dens, v, kk)
        if best is None:
            break
        _, v, kk = best
        sub, hit = _recursive_greedy(cl, level - 1, kk, v, X)
        sub = set(sub) | set(zip(pr[v], pr[v][1:]))
        hit = hit & X
        if not hit:
            break
        edges |= sub
        covered |= hit
        X -= hit
        k -= len(hit)
    return edges, covered


def dst_approx(G: nx.DiGraph, s, sinks, level: int = 2) -> TreeSolution:
    """Recursive-greedy directed Steiner tree of the given level.

    Candidate subtrees at level 2 are ranked by the density of the path to a
    hub plus the hub's level-1 star (prefix sums of sorted distances).
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    dist, _ = nx.single_source_dijkstra(G, s)
    for t in sinks:
        if t not in dist:
            raise ValueError(f"sink {t!r} unreachable")
    cl = _Closure(G)
    X = set(sinks) - {s}
    edges, covered = _recursive_greedy(cl, level, len(X), s, X)
    if covered != X:
        rest, _ = _level1(cl, len(X - covered), s, X - covered)
        edges |= rest
    return _tree_from_edges(G, edges, s, sinks)


def steiner_exact(G: nx.DiGraph, s, sinks) -> float:
    """Minimum directed Steiner tree cost by the Dreyfus-Wagner recursion.

    best[S][v] is the cheapest arborescence rooted at v reaching every sink
    in S; exponential in the number of sinks, so only for small instances.
    """
    import itertools
    T = [t for t in dict.fromkeys(sinks) if t != s]
    if not T:
        return 0.0
    dist = dict(nx.all_pairs_dijkstra_path_length(G))
    nodes = list(G.nodes)
    inf = math.inf
    best = {}
    for k, t in enumerate(T):
        best[1 << k] = {v: dist[v].get(t, inf) for v in nodes}
    for size in range(2, len(T) + 1):
        for combo in itertools.combinations(range(len(T)), size):
            S = sum(1 << k for k in combo)
            merge = {}
            for u in nodes:
                m = inf
                sub = (S - 1) & S
                while sub:
                    if sub & (1 << combo[0]):      # each split once
                        m = min(m, best[sub][u] + best[S ^ sub][u])
                    sub = (sub - 1) & S
                merge[u] = m
            best[S] = {v: min(dist[v].get(u, inf) + merge[u] for u in nodes) for v in nodes}
    return float(best[(1 << len(T)) - 1][s])


# ---------------------------------------------------------------------------
# broadcast incremental power


def mip_multicast(g: GeometricNet, s, sinks) -> TreeSolution:
    """Broadcast incremental power tree pruned to the sinks.

    Grow a tree from s, each step attaching the outside node whose cheapest
    attachment raises some tree node's transmit level the least; then drop
    branches that feed no sink and lower each transmitter to its farthest
    remaining child.  Transmit levels are the node's hyperarcs.
    """
    net, cost = g.net, g.cost
    levels = {i: sorted(net.out_arcs(i), key=lambda a: cost[a]) for i in net.nodes}

    def level_for(i, j):
        for a in levels[i]:
            if j in a.head:
                return cost[a]
        return math.inf

    power = {s: 0.0}
    parent = {}
    need = set(sinks)
    while not need <= set(power):
        best = None
        for i in sorted(power, key=str):
            for a in levels[i]:
                for j in sorted(a.head - set(power), key=str):
                    inc = max(cost[a] - power[i], 0.0)
                    if best is None or inc < best[0] - 1e-12:
                        best = (inc, i, j, cost[a])
        if best is None:
            raise ValueError("sink unreachable")
        _, i, j, c = best
        power[i] = max(power[i], c)
        power[j] = 0.0
        parent[j] = i
        # broadcast advantage: everything inside the new level is covered too
        for a in levels[i]:
            if cost[a] <= power[i]:
                for k in a.head:
                    if k not in power:
                        power[k] = 0.0
                        parent[k] = i
    keep = set()
    for t in sinks:
        v = t
        while v != s:
            keep.add((parent[v], v))
            v = parent[v]
    arcs = sorted(keep, key=lambda e: (str(e[0]), str(e[1])))
    tx = {}
    for u, v in arcs:
        tx[u] = max(tx.get(u, 0.0), level_for(u, v))
    return TreeSolution(arcs, float(sum(tx.values())), s)


def coded_energy(g: GeometricNet, s, sinks) -> float:
    spec = MulticastSpec(s, list(sinks), 1.0, g.cost)
    sol = solve_reference(build_nested(g.net, spec, NestedReach(g.net, g.cost)))
    if sol.status != "optimal":
        raise ValueError(f"energy LP {sol.status}")
    return sol.cost


def coded_weight(G: nx.DiGraph, s, sinks) -> float:
    net = Hypernet(G.nodes)
    cost = {}
    for u, v, d in G.edges(data=True):
        cost[net.add_arc(u, v)] = float(d["weight"])
    sol = solve_reference(build_lossless(net, MulticastSpec(s, list(sinks), 1.0, cost)))
    if sol.status != "optimal":
        raise ValueError(f"weight LP {sol.status}")
    return sol.cost


# ---------------------------------------------------------------------------
# wireline graphs


class MalformedWeights(ValueError):
    pass


def load_rocketfuel(path) -> nx.DiGraph:
    """Read a weights file: one 'endpoint endpoint weight' triple per line.

    Blank lines and '#' comments are skipped.  Each line is one directed arc.
    """
    G = nx.DiGraph()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 3:
                raise MalformedWeights(f"line {lineno}: expected 3 fields, got {len(parts)}")
            u, v, w = parts
            try:
                w = float(w)
            except ValueError:
                raise MalformedWeights(f"line {lineno}: bad weight {w!r}") from None
            if w <= 0:
                raise MalformedWeights(f"line {lineno}: weight must be positive")
            G.add_edge(u, v, weight=w)
    return G


def write_rocketfuel(G: nx.DiGraph, path):
    with open(path, "w") as fh:
        for u, v, d in G.edges(data=True):
            fh.write(f"{u} {v} {d['weight']:g}\n")


def weights_report(G: nx.DiGraph) -> dict:
    w = [d["weight"] for _, _, d in G.edges(data=True)]
    return {"nodes": G.number_of_nodes(), "arcs": G.number_of_edges(),
            "min_weight": min(w, default=0.0), "max_weight": max(w, default=0.0),
            "strongly_connected": bool(G.number_of_nodes()) and nx.is_strongly_connected(G)}


def synthetic_wireline(n: int, seed=0, max_weight: int = 10) -> nx.DiGraph:
    """Connected random Waxman topology with symmetric integer link weights."""
    rng = np.random.default_rng(seed)
    for attempt in range(1000):
        H = nx.waxman_graph(n, beta=0.6, alpha=0.3, seed=int(rng.integers(2 ** 31)))
        if nx.is_connected(H):
            break
    else:
        raise RuntimeError("could not draw a connected topology")
    G = nx.DiGraph()
    G.add_nodes_from(range(n))
    for u, v in sorted(H.edges()):
        w = float(rng.integers(1, max_weight + 1))
        G.add_edge(u, v, weight=w)
        G.add_edge(v, u, weight=w)
    return G
