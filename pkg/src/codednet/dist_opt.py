"""Decentralized solution of the subgraph LPs.

Two algorithms:

* a subgradient method on the Lagrangian dual of the nested formulation,
  with per-sink shortest paths (synchronous Bellman-Ford) as the subproblem,
  Euclidean projection onto scaled simplices, and primal recovery by
  averaging the subproblem flows;
* a discretized primal-dual (Arrow-Hurwicz style) iteration for the lossless
  problem with an l^m-smoothed strictly convex cost.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .netmodel import Hypernet
from .subgraph_opt import MulticastSpec, NestedReach


# ---------------------------------------------------------------------------
# projection onto {v >= 0, sum v = s}


def simplex_project(u, s: float) -> np.ndarray:
    """Euclidean projection of u onto the simplex of mass s.

    Sort u descending and take the first k with (s - sum_{r<=k} u_r)/k <= -u_{k+1}
    (or k = len(u)); the projection is max(0, u + d) with d the k-th offset.
    """
    u = np.asarray(u, float)
    if s < 0:
        raise ValueError("simplex mass must be nonnegative")
    if u.ndim != 1 or u.size == 0:
        raise ValueError("need a nonempty vector")
    return simplex_project_rows(u[None, :], np.array([s]))[0]


def simplex_project_rows(U: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Row-wise projection of U onto simplices of masses s."""
    U = np.asarray(U, float)
    n = U.shape[1]
    srt = -np.sort(-U, axis=1)
    k = np.arange(1, n + 1)
    d = (s[:, None] - np.cumsum(srt, axis=1)) / k          # offset if first k kept
    nxt = np.concatenate([srt[:, 1:], np.full((U.shape[0], 1), -np.inf)], axis=1)
    stop = d <= -nxt
    khat = np.where(stop.any(axis=1), stop.argmax(axis=1), n - 1)
    dd = d[np.arange(U.shape[0]), khat]
    return np.maximum(U + dd[:, None], 0.0)


# ---------------------------------------------------------------------------
# shortest paths


def bellman_ford(n_nodes: int, tails, heads, w, src: int):
    """Synchronous rounds; returns (dist, predecessor edge, rounds).

    Among equal-length paths, the one with fewest hops is taken, and among
    those the lexicographically smallest (tail, head) edge sequence.
    """
    tails = np.asarray(tails)
    heads = np.asarray(heads)
    w = np.asarray(w, float)
    d = np.full(n_nodes, np.inf)
    d[src] = 0.0
    rounds = 0
    for rounds in range(1, n_nodes + 1):
        cand = d[tails] + w
        nd = d.copy()
        np.minimum.at(nd, heads, cand)
        if np.array_equal(nd, d):
            break
        d = nd
    else:
        raise ValueError("negative cycle")
    scale = max(1.0, float(np.max(np.abs(d[np.isfinite(d)]))))
    fin = np.isfinite(d[tails])
    gap = np.full(len(w), np.inf)
    gap[fin] = np.abs(d[tails[fin]] + w[fin] - d[heads[fin]])
    tight = gap <= 1e-12 * scale
    pred = np.full(n_nodes, -1)
    order = np.lexsort((heads, tails))
    out = {}
    for e in order:
        if tight[e]:
            out.setdefault(int(tails[e]), []).append(int(e))
    seen = np.zeros(n_nodes, bool)
    seen[src] = True
    dq = deque([src])
    while dq:
        u = dq.popleft()
        for e in out.get(u, []):
            v = int(heads[e])
            if not seen[v]:
                seen[v] = True
                pred[v] = e
                dq.append(v)
    return d, pred, rounds


def path_edges(pred, heads, tails, src, dst):
    edges = []
    v = dst
    while v != src:
        e = pred[v]
        if e < 0:
            raise ValueError("destination unreachable")
        edges.append(int(e))
        v = int(tails[e])
    return edges[::-1]


# ---------------------------------------------------------------------------
# subgradient method on nested networks


@dataclass
class StepRule:
    """theta[n] for n = 1, 2, ...

    kind "power":    n ** -alpha
         "harmonic": a / (b + c n)
    """
    kind: str = "power"
    alpha: float = 0.8
    a: float = 1.0
    b: float = 0.0
    c: float = 1.0
    scale: float = 1.0

    def __call__(self, n: int) -> float:
        if self.kind == "power":
            return self.scale * n ** (-self.alpha)
        if self.kind == "harmonic":
            return self.scale * self.a / (self.b + self.c * n)
        raise ValueError(f"unknown step rule {self.kind!r}")


class Recovery:
    """Running primal estimate x~[n] from subproblem flows x^[1..n].

    kind "uniform":   equal weights 1/n
         "theta":     weights theta[l] / sum theta
         "window":    equal weights until n = window, then the mean of the last
                      window iterates
    """

    def __init__(self, kind: str = "uniform", window: int = 30):
        if kind not in ("uniform", "theta", "window"):
            raise ValueError(f"unknown recovery {kind!r}")
        self.kind, self.window = kind, window
        self.n = 0
        self.x = None
        self.wsum = 0.0
        self.buf: deque = deque()

    def push(self, xhat: np.ndarray, theta: float = 1.0) -> np.ndarray:
        self.n += 1
        if self.kind == "uniform":
            self.x = xhat.copy() if self.x is None else self.x + (xhat - self.x) / self.n
        elif self.kind == "theta":
            self.wsum += theta
            mu = theta / self.wsum
            self.x = xhat.copy() if self.x is None else (1 - mu) * self.x + mu * xhat
        else:
            self.buf.append(xhat.copy())
            if len(self.buf) > self.window:
                self.buf.popleft()
            self.x = np.mean(self.buf, axis=0)
        return self.x


class NestedDual:
    """Arrays for the dual of the nested problem."""

    def __init__(self, net: Hypernet, spec: MulticastSpec, reach: NestedReach | None = None):
        self.net, self.spec = net, spec
        self.reach = reach or NestedReach(net, spec.cost)
        self.nodes = list(net.nodes)
        self.nix = {n: k for k, n in enumerate(self.nodes)}
        self.pairs = list(self.reach.pairs)
        self.tails = np.array([self.nix[i] for i, _ in self.pairs])
        self.heads = np.array([self.nix[j] for _, j in self.pairs])
        self.hyper = [a for i in self.reach.order for a in self.reach.order[i]]
        self.hix = {a: k for k, a in enumerate(self.hyper)}
        incr = self.reach.increments(spec.cost)
        self.s = np.array([incr[a] for a in self.hyper])
        self.a = np.array([spec.cost[a] for a in self.hyper])
        # C[pair, hyperarc] = 1 when the hyperarc is no wider than the pair's shell
        C = np.zeros((len(self.pairs), len(self.hyper)))
        for k, (i, j) in enumerate(self.pairs):
            mj = self.reach.shell[(i, j)]
            for m, a in enumerate(self.reach.order[i], 1):
                if m <= mj:
                    C[k, self.hix[a]] = 1.0
        self.C = C
        self.sinks = list(spec.sinks)
        self.R = np.array([spec.rate_of(t) for t in self.sinks])
        self.src = self.nix[spec.source]

    def subproblem(self, P: np.ndarray):
        """P: hyperarcs x sinks prices.  Returns (xhat pairs x sinks, dual value, messages)."""
        W = self.C @ P
        X = np.zeros((len(self.pairs), len(self.sinks)))
        val, msgs = 0.0, 0
        for k, t in enumerate(self.sinks):
            d, pred, rounds = bellman_ford(len(self.nodes), self.tails, self.heads, W[:, k], self.src)
            msgs += rounds * len(self.pairs)
            for e in path_edges(pred, self.heads, self.tails, self.src, self.nix[t]):
                X[e, k] = self.R[k]
            val += self.R[k] * d[self.nix[t]]
        return X, val, msgs

    def primal_cost(self, X: np.ndarray) -> float:
        """Cost of the cheapest hyperarc usage carrying pair flows X."""
        G = self.C.T @ X                  # hyperarcs x sinks: flow beyond each shell
        need = G.max(axis=1)
        z = np.zeros(len(self.hyper))
        for i, arcs in self.reach.order.items():
            above = 0.0
            for a in reversed(arcs):
                k = self.hix[a]
                z[k] = max(need[k] - above, 0.0)
                above += z[k]
        return float(self.a @ z)

    def feasibility(self, X: np.ndarray) -> float:
        """Largest conservation violation of the pair flows."""
        worst = 0.0
        for k, t in enumerate(self.sinks):
            bal = np.zeros(len(self.nodes))
            np.add.at(bal, self.tails, X[:, k])
            np.add.at(bal, self.heads, -X[:, k])
            want = np.zeros(len(self.nodes))
            want[self.src] = self.R[k]
            want[self.nix[t]] = -self.R[k]
            worst = max(worst, float(np.abs(bal - want).max()))
        return worst


@dataclass
class SubgradientTrace:
    dual: list = field(default_factory=list)
    primal: dict = field(default_factory=dict)       # recovery kind -> costs
    violation: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    prices: np.ndarray | None = None

    def rows(self, kind: str = "window"):
        for n, (d, pc, v, m) in enumerate(zip(self.dual, self.primal[kind], self.violation,
                                               self.messages), 1):
            yield n, d, pc, v, m


def subgradient(net: Hypernet, spec: MulticastSpec, iters: int, step: StepRule | None = None,
                recoveries=("uniform", "window"), reach: NestedReach | None = None,
                window: int = 30, tol: float | None = None) -> SubgradientTrace:
    """Run the dual subgradient method; record dual values and recovered costs.

    With ``tol``, stop once the first recovery's cost has changed by less
    than tol (relative) over the last 20 iterations.
    """
    if iters < 1:
        raise ValueError("iters must be positive")
    step = step or StepRule()
    nd = NestedDual(net, spec, reach)
    T = len(nd.sinks)
    P = np.repeat(nd.s[:, None] / T, T, axis=1)
    recs = {k: Recovery(k, window) for k in recoveries}
    tr = SubgradientTrace(primal={k: [] for k in recoveries})
    msgs = 0
    for n in range(1, iters + 1):
        X, val, m = nd.subproblem(P)
        msgs += m + len(nd.pairs) * T       # price updates exchanged with neighbours
        th = step(n)
        for k, rec in recs.items():
            xt = rec.push(X, th)
            tr.primal[k].append(nd.primal_cost(xt))
        tr.dual.append(val)
        tr.violation.append(nd.feasibility(recs[recoveries[0]].x))
        tr.messages.append(msgs)
        G = nd.C.T @ X
        P = simplex_project_rows(P + th * G, nd.s)
        hist = tr.primal[recoveries[0]]
        if tol is not None and n > 20 and abs(hist[-1] - hist[-21]) <= tol * abs(hist[-1]):
            break
    tr.prices = P
    return tr


def write_trace_csv(path, trace: SubgradientTrace, kind: str = "window"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "dual_value", "primal_cost", "feasibility_violation", "messages"])
        for row in trace.rows(kind):
            w.writerow(row)


# ---------------------------------------------------------------------------
# primal-dual for the smoothed lossless problem


def layered_instance(seed, cost_range=(1.0, 3.0)):
    """Small two-sink lossless instance for the smoothed problem.

    Layers source -> L1 -> L2 -> {t1, t2} with arcs both ways between the
    sinks, so every node lies on a path to each sink and the prices of the
    smoothed problem are unique up to a shift.  Returns (net, spec, a) with
    a the per-hyperarc coefficients of f(z) = a z^2.
    """
    rng = np.random.default_rng(seed)
    w1, w2 = int(rng.integers(2, 4)), int(rng.integers(2, 4))
    L1 = list(range(1, 1 + w1))
    L2 = list(range(1 + w1, 1 + w1 + w2))
    t1, t2 = 1 + w1 + w2, 2 + w1 + w2
    E = {(0, u) for u in L1}
    for u in L1:
        outs = [v for v in L2 if rng.random() < 0.6] or [int(rng.choice(L2))]
        E.update((u, v) for v in outs)
    for v in L2:
        if not any((u, v) in E for u in L1):
            E.add((int(rng.choice(L1)), v))
        E.update({(v, t1), (v, t2)})
    E.update({(t1, t2), (t2, t1)})
    for u in L1:
        for v in L1:
            if u < v and rng.random() < 0.3:
                E.add((u, v))
    net = Hypernet(range(t2 + 1), [(u, {v}) for u, v in sorted(E)])
    a = rng.uniform(*cost_range, size=len(net.arcs))
    return net, MulticastSpec(0, [t1, t2], 1.0), a


class FlowIndex:
    """Edges (hyperarc, receiver) of a lossless hypergraph with incidence data."""

    def __init__(self, net: Hypernet, spec: MulticastSpec):
        self.nodes = list(net.nodes)
        nix = {n: k for k, n in enumerate(self.nodes)}
        self.edges = [(a, j) for a in net.arcs for j in sorted(a.head, key=str)]
        self.arcs = list(net.arcs)
        aix = {a: k for k, a in enumerate(self.arcs)}
        E, N = len(self.edges), len(self.nodes)
        self.n_edges = E
        self.tail = np.array([nix[a.tail] for a, _ in self.edges])
        self.head = np.array([nix[j] for _, j in self.edges])
        self.arc_of = np.array([aix[a] for a, _ in self.edges])
        inc = np.zeros((N, E))
        inc[self.tail, np.arange(E)] += 1.0
        inc[self.head, np.arange(E)] -= 1.0
        self.incidence = inc
        S = np.zeros((len(self.arcs), E))
        S[self.arc_of, np.arange(E)] = 1.0
        self.arc_sum = S
        self.sinks = list(spec.sinks)
        sup = np.zeros((len(self.sinks), N))
        for k, t in enumerate(self.sinks):
            R = spec.rate_of(t)
            sup[k, nix[spec.source]] += R
            sup[k, nix[t]] -= R
        self.supply = sup


@dataclass
class PDState:
    x: np.ndarray       # batch x sinks x edges
    p: np.ndarray       # batch x sinks x nodes
    lam: np.ndarray     # batch x sinks x edges


class PrimalDual:
    """Discretized primal-dual dynamics, vectorized over a batch of starts.

    Objective: sum over hyperarcs of f(z'), z' the l^m norm over sinks of the
    per-sink flow on the hyperarc.
    """

    def __init__(self, net: Hypernet, spec: MulticastSpec, m: float, f, df,
                 steps=(0.05, 0.05, 0.05)):
        self.fi = FlowIndex(net, spec)
        self.m, self.f, self.df = m, f, df
        self.alpha, self.beta, self.gamma = steps

    def init(self, batch: int, rng, scale: float = 1.0) -> PDState:
        T, E, N = len(self.fi.sinks), self.fi.n_edges, len(self.fi.nodes)
        x = rng.uniform(0, scale, (batch, T, E))
        p = rng.uniform(-scale, scale, (batch, T, N))
        lam = rng.uniform(0, scale, (batch, T, E))
        return PDState(x, p, lam)

    def zprime(self, x):
        S = x @ self.fi.arc_sum.T                      # batch x T x arcs
        A = np.abs(S)
        top = A.max(axis=1, keepdims=True)
        safe = np.where(top > 0, top, 1.0)
        z = top[:, 0, :] * (np.sum((A / safe) ** self.m, axis=1)) ** (1.0 / self.m)
        return S, z

    def grad(self, x):
        S, z = self.zprime(x)
        zs = np.where(z > 0, z, 1.0)[:, None, :]
        G = self.df(z)[:, None, :] * np.sign(S) * (np.abs(S) / zs) ** (self.m - 1)
        G = np.where(z[:, None, :] > 0, G, 0.0)
        return G[:, :, self.fi.arc_of]                 # per edge

    def step(self, st: PDState) -> PDState:
        fi = self.fi
        g = self.grad(st.x)
        q = st.p[:, :, fi.tail] - st.p[:, :, fi.head]
        y = st.x @ fi.incidence.T                      # net outflow per node
        x = st.x - self.alpha * (g + q - st.lam)
        p = st.p + self.beta * (y - fi.supply[None])
        lam = np.maximum(st.lam - self.gamma * st.x, 0.0)
        return PDState(x, p, lam)

    def run(self, st: PDState, rounds: int, tol: float = 0.0):
        for n in range(rounds):
            new = self.step(st)
            if tol and n % 100 == 0:
                ch = max(np.abs(new.x - st.x).max(), np.abs(new.p - st.p).max(),
                         np.abs(new.lam - st.lam).max())
                st = new
                if ch < tol:
                    return st, n + 1
            else:
                st = new
        return st, rounds

    def kkt_residual(self, st: PDState) -> np.ndarray:
        """Per batch member: max violation of stationarity, conservation,
        sign constraints and complementary slackness."""
        fi = self.fi
        g = self.grad(st.x)
        q = st.p[:, :, fi.tail] - st.p[:, :, fi.head]
        stat = np.abs(g + q - st.lam).max(axis=(1, 2))
        cons = np.abs(st.x @ fi.incidence.T - fi.supply[None]).max(axis=(1, 2))
        neg = np.maximum(-st.x, 0).max(axis=(1, 2))
        negl = np.maximum(-st.lam, 0).max(axis=(1, 2))
        comp = np.abs(st.lam * st.x).max(axis=(1, 2))
        return np.max(np.stack([stat, cons, neg, negl, comp]), axis=0)

    def cost(self, st: PDState) -> np.ndarray:
        _, z = self.zprime(st.x)
        return self.f(z).sum(axis=1)

    @staticmethod
    def normalized(st: PDState) -> np.ndarray:
        """Point coordinates with the free per-sink shift of the prices removed."""
        p = st.p - st.p.mean(axis=2, keepdims=True)
        B = st.x.shape[0]
        return np.concatenate([st.x.reshape(B, -1), p.reshape(B, -1), st.lam.reshape(B, -1)],
                              axis=1)
