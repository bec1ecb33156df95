"""Minimum-cost subgraph selection for coded multicast, as linear programs.

The formulations share one container (``LpProblem``):

* lossless   per-sink flows x[t][i->J:j] with sum_j x <= z_iJ
* lossy      sum_{j in K} x[t][i->J:j] <= b_iJK z_iJ for every K in J, where
             b_iJK is the chance that some node of K hears a transmission
* nested     when each node's hyperarcs are nested (J_1 < J_2 < ...), flows
             on plain node pairs and one constraint per shell
* multi_connection  several sessions, each claiming part of the rate at
             which every receiver subset hears a hyperarc

Convex separable costs are replaced by their piecewise-linear interpolant on
a uniform grid of knots (epigraph form).  HiGHS (through scipy) solves them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.sparse import coo_matrix

from .netmodel import FlowAssignment, Hyperarc, Hypernet, LossModel, nonempty_subsets

N_KNOTS = 64


@dataclass
class MulticastSpec:
    source: object
    sinks: list
    rate: object = 1.0                # float or {sink: rate}
    cost: dict = field(default_factory=dict)       # hyperarc -> linear cost
    convex: dict = field(default_factory=dict)     # hyperarc -> callable f(z)
    capacity: dict | None = None      # hyperarc -> upper bound on z
    zmax: float | None = None         # range of the convex interpolation

    def rate_of(self, t) -> float:
        return float(self.rate[t]) if isinstance(self.rate, dict) else float(self.rate)

    def validate(self, net: Hypernet):
        if self.source not in net._node_set:
            raise KeyError(f"unknown source {self.source!r}")
        if not self.sinks:
            raise ValueError("empty sink set")
        for t in self.sinks:
            if t not in net._node_set:
                raise KeyError(f"unknown sink {t!r}")
            if t == self.source:
                raise ValueError("source listed as a sink")
            if self.rate_of(t) < 0:
                raise ValueError("negative rate")
        for a, v in self.cost.items():
            if v < 0:
                raise ValueError(f"negative cost on {a!r}")


@dataclass
class LpProblem:
    variant: str
    c: np.ndarray
    A_ub: object
    b_ub: np.ndarray
    A_eq: object
    b_eq: np.ndarray
    bounds: list
    names: list
    z_index: dict                 # hyperarc -> column
    x_index: dict                 # (t, hyperarc, j) or (t, i, j) -> column
    spec: MulticastSpec
    reach: "NestedReach | None" = None

    @property
    def n_vars(self):
        return len(self.c)


@dataclass
class Solution:
    status: str
    cost: float
    z: dict
    x: dict
    duality_gap: float = 0.0
    lp: LpProblem | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "cost": self.cost,
            "duality_gap": self.duality_gap,
            "z": {f"z[{a!r}]": v for a, v in self.z.items() if v > 1e-12},
            "x": {_xname(k): v for k, v in self.x.items() if v > 1e-12},
        }


def _xname(key) -> str:
    *pre, a, j = key
    tag = "".join(f"[{k}]" for k in pre)
    if isinstance(a, Hyperarc):
        return f"x{tag}[{a!r}:{j}]"
    return f"x{tag}[{a}->{j}]"


class _Builder:
    def __init__(self):
        self.names, self.c, self.bounds = [], [], []
        self.ub_rows, self.ub_cols, self.ub_vals, self.b_ub = [], [], [], []
        self.eq_rows, self.eq_cols, self.eq_vals, self.b_eq = [], [], [], []

    def var(self, name, cost=0.0, lo=0.0, hi=None):
        self.names.append(name)
        self.c.append(cost)
        self.bounds.append((lo, hi))
        return len(self.names) - 1

    def le(self, terms, rhs):
        r = len(self.b_ub)
        for col, v in terms:
            self.ub_rows.append(r)
            self.ub_cols.append(col)
            self.ub_vals.append(v)
        self.b_ub.append(rhs)

    def eq(self, terms, rhs):
        r = len(self.b_eq)
        for col, v in terms:
            self.eq_rows.append(r)
            self.eq_cols.append(col)
            self.eq_vals.append(v)
        self.b_eq.append(rhs)

    def finish(self, variant, z_index, x_index, spec, reach=None) -> LpProblem:
        n = len(self.c)
        A_ub = coo_matrix((self.ub_vals, (self.ub_rows, self.ub_cols)),
                          shape=(len(self.b_ub), n)).tocsr()
        A_eq = coo_matrix((self.eq_vals, (self.eq_rows, self.eq_cols)),
                          shape=(len(self.b_eq), n)).tocsr()
        return LpProblem(variant, np.array(self.c, float), A_ub, np.array(self.b_ub, float),
                         A_eq, np.array(self.b_eq, float), self.bounds, self.names,
                         z_index, x_index, spec, reach)


def _default_zmax(net, spec):
    return spec.zmax or max(sum(spec.rate_of(t) for t in spec.sinks), 1e-9)


def _add_z_vars(b: _Builder, net: Hypernet, spec: MulticastSpec):
    z_index = {}
    zmax = _default_zmax(net, spec)
    for a in net.arcs:
        hi = None if spec.capacity is None else spec.capacity.get(a, None)
        z_index[a] = b.var(f"z[{a!r}]", spec.cost.get(a, 0.0), 0.0, hi)
    for a, f in spec.convex.items():
        # epigraph of the piecewise-linear interpolant of f on [0, zmax]
        top = zmax if spec.capacity is None else spec.capacity.get(a, zmax)
        knots = np.linspace(0.0, top, N_KNOTS)
        vals = np.array([f(k) for k in knots], float)
        w = b.var(f"w[{a!r}]", 1.0, None, None)
        for k in range(N_KNOTS - 1):
            slope = (vals[k + 1] - vals[k]) / (knots[k + 1] - knots[k])
            icpt = vals[k] - slope * knots[k]
            b.le([(z_index[a], slope), (w, -1.0)], -icpt)
    return z_index


def _conservation(b: _Builder, nodes, spec: MulticastSpec, t, flows):
    """flows: list of (tail, head, column)."""
    out = {n: [] for n in nodes}
    for i, j, col in flows:
        out[i].append((col, 1.0))
        out[j].append((col, -1.0))
    R = spec.rate_of(t)
    for n in nodes:
        rhs = R if n == spec.source else (-R if n == t else 0.0)
        b.eq(out[n], rhs)


def build_lossless(net: Hypernet, spec: MulticastSpec) -> LpProblem:
    spec.validate(net)
    b = _Builder()
    z_index = _add_z_vars(b, net, spec)
    x_index = {}
    for t in spec.sinks:
        flows = []
        for a in net.arcs:
            for j in sorted(a.head, key=str):
                col = b.var(f"x[{t}][{a!r}:{j}]")
                x_index[(t, a, j)] = col
                flows.append((a.tail, j, col))
        _conservation(b, net.nodes, spec, t, flows)
        for a in net.arcs:
            b.le([(x_index[(t, a, j)], 1.0) for j in a.head] + [(z_index[a], -1.0)], 0.0)
    return b.finish("lossless", z_index, x_index, spec)


def reach_fractions(loss: LossModel, a: Hyperarc) -> dict:
    """b_iJK: probability that at least one node of K hears a transmission."""
    probs = loss.subset_probs(a)
    return {K: sum(p for L, p in probs.items() if L & K) for K in nonempty_subsets(a.head)}


def build_lossy(net: Hypernet, loss: LossModel, spec: MulticastSpec) -> LpProblem:
    spec.validate(net)
    if loss.kind == "aloha_relay":
        raise ValueError("collision channel is not linear in z; use solve_aloha_relay")
    b = _Builder()
    z_index = _add_z_vars(b, net, spec)
    x_index = {}
    frac = {a: reach_fractions(loss, a) for a in net.arcs}
    for t in spec.sinks:
        flows = []
        for a in net.arcs:
            for j in sorted(a.head, key=str):
                col = b.var(f"x[{t}][{a!r}:{j}]")
                x_index[(t, a, j)] = col
                flows.append((a.tail, j, col))
        _conservation(b, net.nodes, spec, t, flows)
        for a in net.arcs:
            for K, bk in frac[a].items():
                b.le([(x_index[(t, a, j)], 1.0) for j in K] + [(z_index[a], -bk)], 0.0)
    return b.finish("lossy", z_index, x_index, spec)


def build_multi_connection(net: Hypernet, loss: LossModel, specs: list) -> LpProblem:
    """Several multicast connections sharing the hyperarc rates.

    Each connection c claims y[c][a, K] of the rate at which exactly K
    receives a transmission on a; the claims of all connections fit inside
    z_a * P(K).  Costs and capacities come from the first connection.
    """
    if not specs:
        raise ValueError("need at least one connection")
    if loss.kind == "aloha_relay":
        raise ValueError("collision channel is not linear in z; use solve_aloha_relay")
    for sp in specs:
        sp.validate(net)
    b = _Builder()
    z_index = _add_z_vars(b, net, specs[0])
    probs = {a: {K: p for K, p in loss.subset_probs(a).items() if K and p > 0} for a in net.arcs}
    y = {}
    for c in range(len(specs)):
        for a in net.arcs:
            for K in probs[a]:
                y[(c, a, K)] = b.var(f"y[{c}][{a!r}:{','.join(map(str, sorted(K, key=str)))}]")
    for a in net.arcs:
        for K, p in probs[a].items():
            b.le([(y[(c, a, K)], 1.0) for c in range(len(specs))] + [(z_index[a], -p)], 0.0)
    x_index = {}
    for c, sp in enumerate(specs):
        for t in sp.sinks:
            flows = []
            for a in net.arcs:
                for j in sorted(a.head, key=str):
                    col = b.var(f"x[{c}][{t}][{a!r}:{j}]")
                    x_index[(c, t, a, j)] = col
                    flows.append((a.tail, j, col))
            _conservation(b, net.nodes, sp, t, flows)
            for a in net.arcs:
                for K in nonempty_subsets(a.head):
                    b.le([(x_index[(c, t, a, j)], 1.0) for j in K] +
                         [(y[(c, a, L)], -1.0) for L in probs[a] if L & K], 0.0)
    return b.finish("multi_connection", z_index, x_index, specs[0])


class NestedReach:
    """Per node, hyperarcs ordered by strictly growing head sets."""

    def __init__(self, net: Hypernet, cost: dict | None = None):
        self.net = net
        self.order: dict = {}        # i -> [hyperarc J_1, J_2, ...]
        self.shell: dict = {}        # (i, j) -> m(i, j), 1-based
        for i in net.nodes:
            arcs = sorted(net.out_arcs(i), key=lambda a: len(a.head))
            if not arcs:
                continue
            for lo, hi in zip(arcs, arcs[1:]):
                if not lo.head < hi.head:
                    raise ValueError(f"hyperarcs of {i!r} are not nested")
                if cost is not None and not cost[lo] < cost[hi]:
                    raise ValueError(f"costs of {i!r} do not increase with reach")
            self.order[i] = arcs
            prev = frozenset()
            for m, a in enumerate(arcs, 1):
                for j in sorted(a.head - prev, key=str):
                    self.shell[(i, j)] = m
                prev = a.head
        self.pairs = sorted(self.shell, key=lambda e: (str(e[0]), self.shell[e], str(e[1])))

    def increments(self, cost: dict) -> dict:
        """Extra cost of each hyperarc over the next smaller one."""
        out = {}
        for i, arcs in self.order.items():
            prev = 0.0
            for a in arcs:
                out[a] = cost[a] - prev
                prev = cost[a]
        return out

    def beyond(self, i, m):
        """Nodes reached by J_M but not by J_{m-1}."""
        return [j for (ii, j), mm in self.shell.items() if ii == i and mm >= m]


def build_nested(net: Hypernet, spec: MulticastSpec, reach: NestedReach | None = None) -> LpProblem:
    spec.validate(net)
    reach = reach or NestedReach(net, spec.cost or None)
    b = _Builder()
    z_index = _add_z_vars(b, net, spec)
    x_index = {}
    for t in spec.sinks:
        flows = []
        for (i, j) in reach.pairs:
            col = b.var(f"x[{t}][{i}->{j}]")
            x_index[(t, i, j)] = col
            flows.append((i, j, col))
        _conservation(b, net.nodes, spec, t, flows)
        for i, arcs in reach.order.items():
            for m in range(1, len(arcs) + 1):
                terms = [(x_index[(t, i, k)], 1.0) for k in reach.beyond(i, m)]
                terms += [(z_index[arcs[n - 1]], -1.0) for n in range(m, len(arcs) + 1)]
                b.le(terms, 0.0)
    return b.finish("nested", z_index, x_index, spec, reach)


def solve_reference(lp: LpProblem) -> Solution:
    res = linprog(lp.c, A_ub=lp.A_ub if lp.A_ub.shape[0] else None,
                  b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
                  A_eq=lp.A_eq, b_eq=lp.b_eq, bounds=lp.bounds, method="highs")
    if res.status == 2:
        return Solution("infeasible", math.inf, {}, {}, math.nan, lp)
    if res.status == 3:
        return Solution("unbounded", -math.inf, {}, {}, math.nan, lp)
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    x = res.x
    dual = float(lp.b_eq @ res.eqlin.marginals)
    if lp.A_ub.shape[0]:
        dual += float(lp.b_ub @ res.ineqlin.marginals)
    for k, (lo, hi) in enumerate(lp.bounds):
        if hi is not None:
            dual += hi * res.upper.marginals[k]
        if lo:
            dual += lo * res.lower.marginals[k]
    z = {a: float(x[c]) for a, c in lp.z_index.items()}
    xs = {k: float(x[c]) for k, c in lp.x_index.items()}
    return Solution("optimal", float(res.fun), z, xs, abs(float(res.fun) - dual), lp)


def cost_of(z: dict, spec: MulticastSpec) -> float:
    tot = sum(spec.cost.get(a, 0.0) * v for a, v in z.items())
    tot += sum(f(z.get(a, 0.0)) for a, f in spec.convex.items())
    return float(tot)


def recover_z(xhat: dict, reach: NestedReach, sinks=None) -> dict:
    """Cheapest hyperarc usage supporting per-sink pair flows xhat[(t, i, j)].

    Works from the widest hyperarc inward: each shell gets what the flows
    leaving beyond it require, less what the wider hyperarcs already carry.
    """
    if sinks is None:
        sinks = sorted({k[0] for k in xhat}, key=str)
    z = {}
    for i, arcs in reach.order.items():
        above = 0.0
        for m in range(len(arcs), 0, -1):
            need = max((sum(xhat.get((t, i, k), 0.0) for k in reach.beyond(i, m))
                        for t in sinks), default=0.0)
            val = need - above
            if val < -1e-9:
                raise ValueError(f"negative residue at {arcs[m - 1]!r}")
            z[arcs[m - 1]] = max(val, 0.0)
            above += z[arcs[m - 1]]
    return z


def recover_x(xhat: dict, z: dict, reach: NestedReach, spec: MulticastSpec | None = None,
              tol: float = 1e-7) -> FlowAssignment:
    """Split pair flows back onto hyperarcs.

    For each node and sink, hyperarcs are filled from the widest inward and
    each serves its farthest outstanding receivers first.  This is feasible
    whenever (xhat, z) satisfies the nested constraints.
    """
    sinks = list(spec.sinks) if spec else sorted({k[0] for k in xhat}, key=str)
    out = {}
    for t in sinks:
        for i, arcs in reach.order.items():
            left = {j: xhat.get((t, i, j), 0.0) for (ii, j) in reach.shell if ii == i}
            for m in range(len(arcs), 0, -1):
                a = arcs[m - 1]
                cap = z.get(a, 0.0)
                for j in sorted(a.head, key=lambda j: (-reach.shell[(i, j)], str(j))):
                    take = min(left[j], cap)
                    if take > 0:
                        out[(a, j, t)] = out.get((a, j, t), 0.0) + take
                        left[j] -= take
                        cap -= take
            rest = max(left.values(), default=0.0)
            if rest > tol:
                raise ValueError(f"flow at {i!r} for sink {t!r} exceeds the hyperarc rates")
    if spec is None:
        return FlowAssignment(out, None, {})
    return FlowAssignment(out, spec.source, {t: spec.rate_of(t) for t in sinks})


def lm_norm(values, m: float) -> float:
    v = np.abs(np.asarray(values, float))
    top = v.max() if v.size else 0.0
    if top == 0:
        return 0.0
    return float(top * np.sum((v / top) ** m) ** (1.0 / m))


def lm_smooth(x: dict, m: float, frac: dict | None = None) -> dict:
    """Smooth the max over sinks by an l^m norm.

    x maps hyperarc -> {sink: {receiver: flow}}.  Without ``frac`` the terms
    are the per-sink totals over the head set; with reach fractions
    frac[a][K] every subset K contributes sum_{j in K} x / b_iJK.
    """
    out = {}
    for a, per_t in x.items():
        terms = []
        for t, fl in per_t.items():
            if frac is None:
                terms.append(sum(fl.values()))
            else:
                for K, bk in frac[a].items():
                    terms.append(sum(fl.get(j, 0.0) for j in K) / bk)
        out[a] = lm_norm(terms, m)
    return out


# ---------------------------------------------------------------------------
# slotted Aloha relay


@dataclass
class AlohaSolution:
    z1: float
    z2: float
    cost: float
    candidates: list
    grid_cost: float


def solve_aloha_relay(p12: float, p13: float, p1both: float, p23: float, R: float,
                      grid: int = 1000) -> AlohaSolution:
    """Minimise z1 + z2 over the two-cut region of the collision relay.

    Node 3 needs rate R across both cuts:
      {1}:    z1 (1 - z2) (p12 + p13 + p1both) >= R
      {1, 2}: z1 (1 - z2) (p13 + p1both) + (1 - z1) z2 p23 >= R
    Candidates are the crossings of the two boundary curves (bisection along
    the first curve) and the best point along each curve where the other
    constraint holds; a uniform grid certifies the answer.
    """
    a1 = p12 + p13 + p1both
    a2 = p13 + p1both

    def g1(u, v):
        return u * (1 - v) * a1 - R

    def g2(u, v):
        return u * (1 - v) * a2 + (1 - u) * v * p23 - R

    c = R / a1
    cands = []
    # along the first boundary u = c / (1 - v), v in [0, 1 - c)
    vs = np.linspace(0.0, 1 - c, 20001)[:-1]
    us = c / (1 - vs)
    h = g2(us, vs)
    for k in np.nonzero(np.sign(h[:-1]) != np.sign(h[1:]))[0]:
        lo, hi = vs[k], vs[k + 1]
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if np.sign(g2(c / (1 - mid), mid)) == np.sign(g2(c / (1 - lo), lo)):
                lo = mid
            else:
                hi = mid
        v = 0.5 * (lo + hi)
        cands.append((c / (1 - v), v))
    ok = h >= -1e-12
    if ok.any():
        k = np.argmin(np.where(ok, us + vs, np.inf))
        cands.append((us[k], vs[k]))
    # along the second boundary: u from v where feasible
    vs2 = np.linspace(0.0, 1.0, 20001)
    den = (1 - vs2) * a2 - vs2 * p23
    with np.errstate(divide="ignore", invalid="ignore"):
        us2 = (R - vs2 * p23) / den
    good = np.isfinite(us2) & (us2 >= 0) & (us2 <= 1) & (g1(us2, vs2) >= -1e-12)
    if good.any():
        k = np.argmin(np.where(good, us2 + vs2, np.inf))
        cands.append((float(us2[k]), float(vs2[k])))
    feas = [(u, v) for u, v in cands
            if 0 <= u <= 1 and 0 <= v <= 1 and g1(u, v) >= -1e-9 and g2(u, v) >= -1e-9]
    # grid certificate
    gg = np.linspace(0, 1, grid + 1)
    U, V = np.meshgrid(gg, gg, indexing="ij")
    mask = (g1(U, V) >= 0) & (g2(U, V) >= 0)
    grid_cost = float((U + V)[mask].min()) if mask.any() else math.inf
    if not feas:
        if math.isfinite(grid_cost):
            raise RuntimeError("no analytic candidate although the grid is feasible")
        raise ValueError("rate not achievable on this relay")
    u, v = min(feas, key=lambda p: p[0] + p[1])
    return AlohaSolution(float(u), float(v), float(u + v), feas, grid_cost)


# ---------------------------------------------------------------------------
# smooth objective reference (for the primal-dual method)


def solve_smoothed(net: Hypernet, spec: MulticastSpec, m: float, f, df, x0=None):
    """min sum_a f(z')_a, z'_a the l^m norm over sinks of the flow on a (SLSQP).

    f and df map the vector of per-hyperarc z' values to per-hyperarc costs
    and derivatives.  Returns (cost, x array of shape (sinks, arc_receivers)).
    """
    from .dist_opt import FlowIndex
    fi = FlowIndex(net, spec)
    T, E = len(spec.sinks), fi.n_edges
    A = fi.incidence            # nodes x edges
    sig = fi.supply             # sinks x nodes

    def split(v):
        return v.reshape(T, E)

    def norms(S):
        return np.array([lm_norm(S[:, k], m) for k in range(S.shape[1])])

    def obj(v):
        return float(np.sum(f(norms(split(v) @ fi.arc_sum.T))))

    def grad(v):
        S = split(v) @ fi.arc_sum.T      # sinks x arcs
        zp = norms(S)
        safe = np.where(zp > 0, zp, 1.0)
        G = np.where(zp > 0, df(zp) * np.sign(S) * (np.abs(S) / safe) ** (m - 1), 0.0)
        return (G @ fi.arc_sum).ravel()

    # each sink's conservation rows sum to zero: drop one to keep full rank
    Ar = A[1:]
    cons = [{"type": "eq", "fun": lambda v, t=t: Ar @ split(v)[t] - sig[t][1:],
             "jac": lambda v, t=t: np.hstack([Ar if s == t else np.zeros_like(Ar)
                                               for s in range(T)])}
            for t in range(T)]
    if x0 is None:
        x0 = np.zeros(T * E)
        for t in range(T):
            sol = linprog(np.ones(E), A_eq=A, b_eq=sig[t], bounds=[(0, None)] * E,
                          method="highs")
            x0[t * E:(t + 1) * E] = sol.x
    res = minimize(obj, x0, jac=grad, constraints=cons, bounds=[(0, None)] * (T * E),
                   method="SLSQP", options={"maxiter": 2000, "ftol": 1e-14})
    return float(res.fun), split(res.x)


def lp_text(lp: LpProblem) -> str:
    """Plain-text dump of the LP with readable variable names."""
    lines = ["minimize"]
    lines.append("  " + " + ".join(f"{c:g} {n}" for c, n in zip(lp.c, lp.names) if c) or "  0")
    lines.append("subject to")
    A = lp.A_ub.tocsr()
    for r in range(A.shape[0]):
        s, e = A.indptr[r], A.indptr[r + 1]
        terms = " + ".join(f"{A.data[k]:g} {lp.names[A.indices[k]]}" for k in range(s, e))
        lines.append(f"  {terms} <= {lp.b_ub[r]:g}")
    A = lp.A_eq.tocsr()
    for r in range(A.shape[0]):
        s, e = A.indptr[r], A.indptr[r + 1]
        terms = " + ".join(f"{A.data[k]:g} {lp.names[A.indices[k]]}" for k in range(s, e))
        lines.append(f"  {terms} = {lp.b_eq[r]:g}")
    lines.append("bounds")
    for n, (lo, hi) in zip(lp.names, lp.bounds):
        lines.append(f"  {'-inf' if lo is None else lo} <= {n} <= {'inf' if hi is None else hi}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def solution_json(sol: Solution) -> str:
    return json.dumps(sol.to_json(), indent=2, sort_keys=True)
