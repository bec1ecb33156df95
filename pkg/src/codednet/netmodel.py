"""Wireless networks as directed hypergraphs, reception models and cuts.

A hyperarc (i, J) is one transmission by node i heard by the set J.  A loss
model turns injection rates z_iJ into the rates z_iJK at which exactly the
subset K of J receives.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

MAX_HEAD = 8
ENUM_LIMIT = 20


@dataclass(frozen=True)
class Hyperarc:
    tail: object
    head: frozenset

    def __post_init__(self):
        if not self.head:
            raise ValueError("hyperarc with empty head set")
        if self.tail in self.head:
            raise ValueError(f"self-loop at {self.tail!r}")
        if len(self.head) > MAX_HEAD:
            raise ValueError(f"head set larger than {MAX_HEAD}")

    def __repr__(self):
        return f"{self.tail}->{','.join(map(str, sorted(self.head, key=str)))}"


def arc(i, J) -> Hyperarc:
    if not isinstance(J, (set, frozenset, list, tuple)):
        J = [J]
    return Hyperarc(i, frozenset(J))


class Hypernet:
    """Nodes plus an ordered collection of hyperarcs."""

    def __init__(self, nodes=(), arcs=()):
        self.nodes: list = []
        self._node_set = set()
        self.arcs: list[Hyperarc] = []
        self._arc_set = set()
        for n in nodes:
            self.add_node(n)
        for a in arcs:
            self.add_arc(*a) if isinstance(a, tuple) else self.add_arc(a.tail, a.head)

    def add_node(self, n):
        if n not in self._node_set:
            self._node_set.add(n)
            self.nodes.append(n)

    def add_arc(self, i, J) -> Hyperarc:
        a = arc(i, J)
        if a in self._arc_set:
            raise ValueError(f"duplicate hyperarc {a!r}")
        self.add_node(i)
        for j in sorted(a.head, key=str):
            self.add_node(j)
        self._arc_set.add(a)
        self.arcs.append(a)
        return a

    def __contains__(self, a):
        return a in self._arc_set

    def out_arcs(self, i):
        return [a for a in self.arcs if a.tail == i]

    def copy(self):
        return Hypernet(self.nodes, [(a.tail, a.head) for a in self.arcs])

    def __repr__(self):
        return f"Hypernet({len(self.nodes)} nodes, {len(self.arcs)} hyperarcs)"


def nonempty_subsets(J):
    items = sorted(J, key=str)
    for r in range(1, len(items) + 1):
        for c in itertools.combinations(items, r):
            yield frozenset(c)


def all_subsets(J):
    yield frozenset()
    yield from nonempty_subsets(J)


@dataclass
class LossModel:
    """Reception model.

    kind:
      lossless      every transmission reaches the whole head set
      iid           receiver j of hyperarc a hears independently with prob p[(a, j)]
                    (or p[(i, j)] keyed by node pair)
      explicit      fractions[a][K] = probability that exactly K receives
      aloha_relay   two-transmitter collision channel; see ``aloha_relay``
    """
    kind: str = "lossless"
    p: dict = field(default_factory=dict)
    fractions: dict = field(default_factory=dict)
    aloha: dict = field(default_factory=dict)

    def success(self, a: Hyperarc, j) -> float:
        if (a, j) in self.p:
            return self.p[(a, j)]
        return self.p[(a.tail, j)]

    def subset_probs(self, a: Hyperarc) -> dict:
        """Distribution over the receiving subset for one transmission on a.

        Not defined for the collision channel, whose receptions depend on the
        other transmitter.
        """
        if self.kind == "lossless":
            return {a.head: 1.0}
        if self.kind == "iid":
            ps = {j: self.success(a, j) for j in a.head}
            out = {}
            for K in all_subsets(a.head):
                pr = 1.0
                for j in a.head:
                    pr *= ps[j] if j in K else 1.0 - ps[j]
                out[K] = pr
            return out
        if self.kind == "explicit":
            return {frozenset(K): v for K, v in self.fractions[a].items()}
        raise ValueError(f"subset probabilities undefined for {self.kind!r}")


def aloha_relay(p12: float, p13: float, p1both: float, p23: float,
                nodes=(1, 2, 3)) -> tuple[Hypernet, LossModel]:
    """Three-node relay where node 1 broadcasts to {2, 3} and node 2 to 3.

    Both transmitting in the same slot is a collision that nobody decodes.
    """
    a, b, c = nodes
    net = Hypernet([a, b, c], [(a, {b, c}), (b, {c})])
    if min(p12, p13, p1both, p23) < 0 or p12 + p13 + p1both > 1 + 1e-12 or p23 > 1:
        raise ValueError("reception probabilities out of range")
    lm = LossModel("aloha_relay", aloha={
        "nodes": (a, b, c),
        frozenset([b]): p12, frozenset([c]): p13, frozenset([b, c]): p1both,
        "relay": p23,
    })
    return net, lm


def reception_rates(net: Hypernet, loss: LossModel, z: dict) -> dict:
    """Map (hyperarc, K) -> rate at which exactly K receives a transmission."""
    for a in net.arcs:
        if z.get(a, 0.0) < 0:
            raise ValueError(f"negative injection rate on {a!r}")
    out = {}
    if loss.kind == "aloha_relay":
        a_, b_, c_ = loss.aloha["nodes"]
        top, rel = arc(a_, {b_, c_}), arc(b_, c_)
        z1, z2 = z.get(top, 0.0), z.get(rel, 0.0)
        if z1 > 1 or z2 > 1:
            raise ValueError("slotted access probabilities must be <= 1")
        for K in (frozenset([b_]), frozenset([c_]), frozenset([b_, c_])):
            out[(top, K)] = z1 * (1 - z2) * loss.aloha[K]
        out[(rel, frozenset([c_]))] = (1 - z1) * z2 * loss.aloha["relay"]
        return out
    for a in net.arcs:
        za = z.get(a, 0.0)
        for K, pr in loss.subset_probs(a).items():
            if K:
                out[(a, K)] = za * pr
    return out


def cut_value(zK: dict, Q) -> float:
    """Rate of information leaving the node set Q."""
    Q = set(Q)
    tot = 0.0
    for (a, K), r in zK.items():
        if a.tail in Q and not a.head <= Q and not K <= Q:
            tot += r
    return tot


def min_cut(net: Hypernet, zK: dict, s, t):
    """Smallest cut separating s from t.  Returns (value, Q)."""
    if s == t:
        raise ValueError("source equals sink")
    for n in (s, t):
        if n not in net._node_set:
            raise KeyError(f"unknown node {n!r}")
    if len(net.nodes) > ENUM_LIMIT:
        return _min_cut_lp(net, zK, s, t)
    others = [n for n in net.nodes if n not in (s, t)]
    bit = {n: k for k, n in enumerate(others)}
    nQ = 1 << len(others)
    Qs = np.arange(nQ, dtype=np.int64)
    val = np.zeros(nQ)
    for (a, K), r in zK.items():
        if r == 0:
            continue
        if a.tail == t:
            continue
        tail_in = np.ones(nQ, bool) if a.tail == s else ((Qs >> bit[a.tail]) & 1).astype(bool)
        if t in K:
            out_ok = np.ones(nQ, bool)
        else:
            kmask = sum(1 << bit[j] for j in K if j != s)
            if kmask == 0:
                continue
            out_ok = (kmask & ~Qs) != 0
        val += np.where(tail_in & out_ok, r, 0.0)
    k = int(np.argmin(val))
    Q = {s} | {n for n in others if (k >> bit[n]) & 1}
    return float(val[k]), Q


@dataclass
class FlowAssignment:
    """x[(hyperarc, j, t)] plus the session it serves."""
    x: dict
    source: object
    rates: dict

    def by_sink(self, t) -> dict:
        return {(a, j): v for (a, j, tt), v in self.x.items() if tt == t}


def _flow_lp(net: Hypernet, zK: dict, s, t):
    """Maximise the rate from s to t under the subset constraints."""
    var = {}
    for a in net.arcs:
        for j in sorted(a.head, key=str):
            var[(a, j)] = len(var)
    R = len(var)
    nv = R + 1
    node_ix = {n: k for k, n in enumerate(net.nodes)}
    rows, cols, vals = [], [], []
    for (a, j), k in var.items():
        rows += [node_ix[a.tail], node_ix[j]]
        cols += [k, k]
        vals += [1.0, -1.0]
    rows += [node_ix[s], node_ix[t]]
    cols += [R, R]
    vals += [-1.0, 1.0]
    A_eq = coo_matrix((vals, (rows, cols)), shape=(len(net.nodes), nv))
    b_eq = np.zeros(len(net.nodes))
    ur, uc, uv, ub = [], [], [], []
    rates = {}
    for (a, K), r in zK.items():
        rates.setdefault(a, {})[K] = rates.get(a, {}).get(K, 0.0) + r
    for a in net.arcs:
        ra = rates.get(a, {})
        for K in nonempty_subsets(a.head):
            cap = sum(v for L, v in ra.items() if L & K)
            for j in K:
                ur.append(len(ub))
                uc.append(var[(a, j)])
                uv.append(1.0)
            ub.append(cap)
    A_ub = coo_matrix((uv, (ur, uc)), shape=(len(ub), nv))
    c = np.zeros(nv)
    c[R] = -1.0
    res = linprog(c, A_ub=A_ub.tocsr(), b_ub=np.array(ub), A_eq=A_eq.tocsr(), b_eq=b_eq,
                  bounds=[(0, None)] * nv, method="highs")
    if res.status != 0:
        raise RuntimeError(f"max-flow LP failed: {res.message}")
    return res, var, node_ix


def max_flow_lp(net: Hypernet, zK: dict, s, t):
    """Maximum rate from s to t.  Returns (rate, FlowAssignment)."""
    res, var, _ = _flow_lp(net, zK, s, t)
    x = {(a, j, t): float(res.x[k]) for (a, j), k in var.items() if res.x[k] > 1e-12}
    rate = float(res.x[-1])
    return rate, FlowAssignment(x, s, {t: rate})


def _min_cut_lp(net, zK, s, t):
    res, var, node_ix = _flow_lp(net, zK, s, t)
    pot = np.asarray(res.eqlin.marginals)
    # potentials separate s from t; sweep thresholds and keep the best cut
    ps, pt = pot[node_ix[s]], pot[node_ix[t]]
    best = (np.inf, None)
    order = sorted(set(np.round(pot, 12)))
    for thr in order:
        if ps <= pt:
            Q = {n for n in net.nodes if pot[node_ix[n]] <= thr}
        else:
            Q = {n for n in net.nodes if pot[node_ix[n]] >= thr}
        if s not in Q or t in Q:
            continue
        v = cut_value(zK, Q)
        if v < best[0]:
            best = (v, Q)
    if best[1] is None:
        return float(res.x[-1]), {s}
    return float(best[0]), best[1]


@dataclass
class FeasibilityReport:
    ok: bool
    max_violation: float
    first: str | None = None


def flow_feasible(net: Hypernet, zK: dict, flow: FlowAssignment, tol: float = 1e-7) -> FeasibilityReport:
    """Check nonnegativity, conservation and the subset capacity constraints."""
    worst, first = 0.0, None

    def note(v, what):
        nonlocal worst, first
        if v > worst:
            worst = v
        if v > tol and first is None:
            first = what

    rates = {}
    for (a, K), r in zK.items():
        rates.setdefault(a, {})[K] = rates.get(a, {}).get(K, 0.0) + r
    for key, v in flow.x.items():
        note(-v, f"negative flow on {key!r}")
    for t, R in flow.rates.items():
        xt = flow.by_sink(t)
        bal = {n: 0.0 for n in net.nodes}
        for (a, j), v in xt.items():
            bal[a.tail] += v
            bal[j] -= v
        for n in net.nodes:
            want = R if n == flow.source else (-R if n == t else 0.0)
            note(abs(bal[n] - want), f"conservation at {n!r} for sink {t!r}")
        for a in net.arcs:
            ra = rates.get(a, {})
            for K in nonempty_subsets(a.head):
                lhs = sum(xt.get((a, j), 0.0) for j in K)
                cap = sum(v for L, v in ra.items() if L & K)
                note(lhs - cap, f"capacity of {a!r} toward {set(K)!r} for sink {t!r}")
    return FeasibilityReport(worst <= tol, worst, first)


def flow_path_decompose(arc_flow: dict, s, t, tol: float = 1e-12):
    """Split a node-to-node flow {(i, j): rate} into s-t paths.

    Circulations are cancelled first; returns a list of (path, rate).
    """
    f = {k: float(v) for k, v in arc_flow.items() if v > tol}

    def succ(u):
        return sorted((j for (i, j) in f if i == u and f[(i, j)] > tol), key=str)

    # cancel cycles
    while True:
        cyc = _find_cycle(f, tol)
        if cyc is None:
            break
        m = min(f[e] for e in cyc)
        for e in cyc:
            f[e] -= m
            if f[e] <= tol:
                del f[e]
    paths = []
    while True:
        # depth-first walk from s along positive arcs
        path, seen = [s], {s}
        while path[-1] != t:
            nxt = [j for j in succ(path[-1]) if j not in seen]
            if not nxt:
                break
            path.append(nxt[0])
            seen.add(nxt[0])
        if path[-1] != t:
            break
        edges = list(zip(path, path[1:]))
        m = min(f[e] for e in edges)
        for e in edges:
            f[e] -= m
            if f[e] <= tol:
                del f[e]
        paths.append((tuple(path), m))
    return paths


def _find_cycle(f, tol):
    adj = {}
    for (i, j), v in f.items():
        if v > tol:
            adj.setdefault(i, []).append(j)
    color, parent = {}, {}
    for root in sorted(adj, key=str):
        if color.get(root):
            continue
        stack = [(root, iter(adj.get(root, [])))]
        color[root] = 1
        while stack:
            u, it = stack[-1]
            for v in it:
                if color.get(v) == 1:
                    cyc, w = [(u, v)], u
                    while w != v:
                        cyc.append((parent[w], w))
                        w = parent[w]
                    return cyc
                if not color.get(v):
                    color[v] = 1
                    parent[v] = u
                    stack.append((v, iter(adj.get(v, []))))
                    break
            else:
                color[u] = 2
                stack.pop()
    return None


# ---------------------------------------------------------------------------
# text format:  "i -> j1,j2 [z=0.5] [p=0.9,0.8]"  (one hyperarc per line, '#' comments)

_LINE = re.compile(r"^\s*(\S+)\s*->\s*([^\s\[]+)\s*(.*)$")


def _node(tok: str):
    return int(tok) if re.fullmatch(r"-?\d+", tok) else tok


def parse_hypernet(text: str):
    """Returns (Hypernet, z, LossModel).  LossModel is iid when any p= given."""
    net = Hypernet()
    z, p = {}, {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ValueError(f"line {ln}: cannot parse {raw!r}")
        i = _node(m.group(1))
        J = [_node(x) for x in m.group(2).split(",") if x]
        try:
            a = net.add_arc(i, J)
        except ValueError as e:
            raise ValueError(f"line {ln}: {e}") from None
        for opt in re.findall(r"\[([^\]]*)\]", m.group(3)):
            key, _, val = opt.partition("=")
            key = key.strip()
            if key == "z":
                z[a] = float(val)
            elif key == "p":
                ps = [float(v) for v in val.split(",")]
                if len(ps) != len(J):
                    raise ValueError(f"line {ln}: need one p per receiver")
                for j, pj in zip(J, ps):
                    if not 0 <= pj <= 1:
                        raise ValueError(f"line {ln}: probability out of range")
                    p[(a, j)] = pj
            else:
                raise ValueError(f"line {ln}: unknown option {key!r}")
    if p:
        for a in net.arcs:
            for j in a.head:
                p.setdefault((a, j), 1.0)
        return net, z, LossModel("iid", p=p)
    return net, z, LossModel("lossless")


def format_hypernet(net: Hypernet, z: dict | None = None, loss: LossModel | None = None) -> str:
    lines = []
    for a in net.arcs:
        J = sorted(a.head, key=str)
        s = f"{a.tail} -> {','.join(map(str, J))}"
        if z and a in z:
            s += f" [z={z[a]!r}]"
        if loss is not None and loss.kind == "iid":
            s += " [p=" + ",".join(repr(loss.success(a, j)) for j in J) + "]"
        lines.append(s)
    return "\n".join(lines) + "\n"
