"""Dynamic multicast: subgraph changes that keep serving the surviving sinks.

Between epochs the subgraph may only grow (componentwise) or only shrink,
and the new subgraph must support the new sink set.  Group membership is a
birth-death process on |T| that is absorbed at the empty group.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .netmodel import Hypernet, LossModel, min_cut, reception_rates
from .subgraph_opt import MulticastSpec, build_lossless, build_lossy, solve_reference

TOL = 1e-7


@dataclass
class DynProblem:
    """Network, source, rate and costs shared by every epoch."""
    net: Hypernet
    source: object
    rate: float = 1.0
    cost: dict = field(default_factory=dict)
    capacity: dict | None = None
    loss: LossModel = field(default_factory=LossModel)

    @property
    def others(self) -> list:
        return [n for n in self.net.nodes if n != self.source]

    def vec(self, z: dict) -> np.ndarray:
        return np.array([z.get(a, 0.0) for a in self.net.arcs])

    def as_dict(self, v) -> dict:
        return {a: float(x) for a, x in zip(self.net.arcs, v)}

    def f(self, z: dict) -> float:
        return float(sum(self.cost.get(a, 0.0) * v for a, v in z.items()))

    def spec(self, T) -> MulticastSpec:
        return MulticastSpec(self.source, sorted(T, key=str), self.rate, self.cost,
                             capacity=self.capacity)


def supports(prob: DynProblem, z: dict, T) -> bool:
    """z in Z(T): within bounds and every sink of T has min-cut >= rate."""
    if any(v < -TOL for v in z.values()):
        return False
    if prob.capacity and any(z.get(a, 0.0) > c + TOL for a, c in prob.capacity.items()):
        return False
    return serves(prob, z, T)


def admissible(prob: DynProblem, z: dict, T_new, z_new: dict) -> bool:
    """z_new supports T_new and is reached from z by a pure increase or decrease."""
    a, b = prob.vec(z), prob.vec(z_new)
    up = np.all(b >= a - TOL)
    down = np.all(b <= a + TOL)
    if not (up or down):
        return False
    return not T_new or supports(prob, z_new, T_new)


def cone_of(prob: DynProblem, z: dict, z_new: dict) -> str:
    a, b = prob.vec(z), prob.vec(z_new)
    if np.allclose(a, b, atol=TOL):
        return "stay"
    if np.all(b >= a - TOL):
        return "increase"
    if np.all(b <= a + TOL):
        return "decrease"
    return "mixed"


class StaticSolver:
    """Cached static optimum z*(T)."""

    def __init__(self, prob: DynProblem):
        self.prob = prob
        self._cache: dict = {}

    def __call__(self, T, lower=None, upper=None) -> dict | None:
        T = frozenset(T)
        if not T:
            return {a: 0.0 for a in self.prob.net.arcs}
        key = (T, None if lower is None else tuple(self.prob.vec(lower)),
               None if upper is None else tuple(self.prob.vec(upper)))
        if key not in self._cache:
            self._cache[key] = self._solve(T, lower, upper)
        return self._cache[key]

    def _solve(self, T, lower, upper):
        p = self.prob
        spec = p.spec(T)
        lp = (build_lossless(p.net, spec) if p.loss.kind == "lossless"
              else build_lossy(p.net, p.loss, spec))
        bounds = list(lp.bounds)
        for a, col in lp.z_index.items():
            lo, hi = bounds[col]
            if lower is not None:
                lo = max(lo or 0.0, lower.get(a, 0.0))
            if upper is not None:
                u = upper.get(a, 0.0)
                hi = u if hi is None else min(hi, u)
            bounds[col] = (lo, hi)
        lp.bounds = bounds
        sol = solve_reference(lp)
        if sol.status != "optimal":
            return None
        return {a: (0.0 if abs(v) < 1e-12 else v) for a, v in sol.z.items()}


def myopic_policy(prob: DynProblem, z: dict, T_new, solver: StaticSolver | None = None,
                  mode: str = "settle") -> tuple[dict, str]:
    """Next subgraph and the cone used.

    mode "settle": head for the static optimum z*(T_new).  Move there if it
    is admissible; otherwise grow to max(z, z*) now and shrink to z* once
    that is admissible (at the next epoch at the latest).
    mode "greedy": the cheaper of the two cone-restricted optima.
    """
    solver = solver or StaticSolver(prob)
    if not T_new:
        return {a: 0.0 for a in prob.net.arcs}, "decrease"
    if mode == "greedy":
        best = None
        for cone, kw in (("increase", {"lower": z}), ("decrease", {"upper": z})):
            u = solver(T_new, **kw)
            if u is not None and (best is None or prob.f(u) < prob.f(best[0]) - 1e-12):
                best = (u, cone)
        if best is None:
            raise ValueError("no admissible subgraph for the new group")
        return best
    if mode != "settle":
        raise ValueError(f"unknown policy mode {mode!r}")
    zs = solver(T_new)
    if zs is None:
        raise ValueError("the new group cannot be served")
    a, b = prob.vec(z), prob.vec(zs)
    if np.all(b >= a - TOL) or np.all(b <= a + TOL):
        return zs, cone_of(prob, z, zs)
    return prob.as_dict(np.maximum(a, b)), "increase"


def broadcast_policy(prob: DynProblem, solver: StaticSolver | None = None):
    """Fixed subgraph supporting every non-source node; episodes start on it."""
    solver = solver or StaticSolver(prob)
    zb = solver(prob.others)
    if zb is None:
        raise ValueError("broadcast is infeasible")

    def policy(p, z, T_new, s=None, mode=None):
        return (zb if T_new else {a: 0.0 for a in p.net.arcs}), "fixed"
    policy.start = zb
    return policy


# ---------------------------------------------------------------------------
# membership


@dataclass
class MembershipProcess:
    """One join (prob birth) or one leave (prob death) per epoch at most."""
    birth: float
    death: float

    def __post_init__(self):
        if self.birth < 0 or self.death < 0 or self.birth + self.death > 1:
            raise ValueError("need birth, death >= 0 with birth + death <= 1")

    def size_chain(self, n_max: int) -> np.ndarray:
        """Transition matrix of |T| on {0..n_max}; 0 absorbs."""
        P = np.zeros((n_max + 1, n_max + 1))
        P[0, 0] = 1.0
        for k in range(1, n_max + 1):
            up = self.birth if k < n_max else 0.0
            P[k, k - 1] += self.death
            if k < n_max:
                P[k, k + 1] += up
            P[k, k] += 1.0 - self.death - up
        return P

    def absorbed_by(self, k0: int, n_max: int, horizon: int) -> float:
        P = np.linalg.matrix_power(self.size_chain(n_max), horizon)
        return float(P[k0, 0])


def membership_step(proc: MembershipProcess, T, candidates, rng) -> frozenset:
    """T' = (T minus leavers) plus joiners; the empty group stays empty."""
    T = frozenset(T)
    if not T:
        return T
    u = rng.random()
    outside = sorted(set(candidates) - T, key=str)
    if u < proc.death:
        leave = sorted(T, key=str)[int(rng.integers(len(T)))]
        return T - {leave}
    if u < proc.death + proc.birth and outside:
        return T | {outside[int(rng.integers(len(outside)))]}
    return T


# ---------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeResult:
    cost: float
    epochs: int
    absorbed: bool
    continuity_ok: bool
    admissible_ok: bool
    trace: list = field(default_factory=list)   # (epoch, |T|, cost, cone, min_cut_ok)


def serves(prob: DynProblem, z: dict, T) -> bool:
    """Min-cut check of z for each sink of T."""
    zK = reception_rates(prob.net, prob.loss, z)
    return all(min_cut(prob.net, zK, prob.source, t)[0] >= prob.rate - TOL for t in T)


def episode_cost(prob: DynProblem, proc: MembershipProcess, T0, horizon: int, seed=0,
                 policy=None, solver: StaticSolver | None = None,
                 z0: dict | None = None) -> EpisodeResult:
    """Accumulate f(z^(m+1)) over epochs with a nonempty group.

    The episode starts from ``z0`` (default: the static optimum for T0) and stops at absorption
    or after ``horizon`` epochs.  Each transition is checked for cone
    admissibility and for continuity: the componentwise minimum of the old
    and new subgraphs must still serve the sinks present in both epochs.
    """
    solver = solver or StaticSolver(prob)
    policy = policy or myopic_policy
    rng = np.random.default_rng(seed)
    T = frozenset(T0)
    if z0 is not None:
        z = dict(z0)
    else:
        z = solver(T) if T else {a: 0.0 for a in prob.net.arcs}
    total, trace = 0.0, []
    cont_ok = adm_ok = True
    m = 0
    for m in range(horizon):
        if not T:
            break
        T_new = membership_step(proc, T, prob.others, rng)
        z_new, cone = policy(prob, z, T_new, solver)
        adm = cone_of(prob, z, z_new) != "mixed" and (not T_new or supports(prob, z_new, T_new))
        both = T & T_new
        low = prob.as_dict(np.minimum(prob.vec(z), prob.vec(z_new)))
        ok = serves(prob, low, both)
        cont_ok &= ok
        adm_ok &= adm
        c = prob.f(z_new) if T_new else 0.0
        total += c
        trace.append((m, len(T_new), c, cone, ok))
        z, T = z_new, T_new
    return EpisodeResult(total, len(trace), not T, cont_ok, adm_ok, trace)


def write_episode_csv(path, res: EpisodeResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "|T|", "cost", "cone", "min_cut_ok"])
        for row in res.trace:
            w.writerow(row)


# ---------------------------------------------------------------------------
# reference networks


def four_node() -> DynProblem:
    """Source 1 with two-hop routes to 4 through 2 and through 3."""
    net = Hypernet([1, 2, 3, 4], [(1, {2}), (1, {3}), (2, {4}), (3, {4})])
    return DynProblem(net, 1, 1.0, {a: 1.0 for a in net.arcs})


def four_node_vec(prob: DynProblem, z: dict) -> tuple:
    """(z12, z13, z24, z34)."""
    return tuple(round(z.get(a, 0.0), 9) for a in prob.net.arcs)


def buttvar() -> DynProblem:
    """Eight-node butterfly variant with unit capacities and rate 2."""
    arcs = [(1, 2), (1, 3), (2, 4), (3, 4), (4, 5), (5, 6), (5, 7), (2, 6), (3, 7),
            (6, 8), (7, 8)]
    net = Hypernet(range(1, 9), [(u, {v}) for u, v in arcs])
    return DynProblem(net, 1, 2.0, {a: 1.0 for a in net.arcs}, {a: 1.0 for a in net.arcs})


BUTTVAR_TREES = (
    [(1, 3), (3, 4), (4, 5), (5, 6), (5, 7), (7, 8)],
    [(1, 2), (2, 6), (6, 8)],
)


def _reaches(edges, root, targets) -> bool:
    adj = {}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
    seen, stack = {root}, [root]
    while stack:
        for v in adj.get(stack.pop(), []):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return set(targets) <= seen


def tree_extensions(arcs, capacity: dict, trees, root, targets, per_tree_rate=1.0) -> list:
    """All ways of adding spare arcs to the routed trees so each reaches targets.

    Every arc may be given to any tree (or none) as long as the trees' total
    rate on it stays within capacity; existing tree arcs are kept.
    """
    load = {}
    for tr in trees:
        for e in tr:
            load[e] = load.get(e, 0.0) + per_tree_rate
    spare = [e for e in arcs if capacity.get(e, np.inf) - load.get(e, 0.0) >= per_tree_rate - TOL]
    found = []
    for assign in itertools.product(range(len(trees) + 1), repeat=len(spare)):
        use = {}
        ok = True
        for e, k in zip(spare, assign):
            if k:
                use.setdefault(k - 1, []).append(e)
        for e in spare:
            n_tr = sum(1 for k, es in use.items() if e in es)
            if load.get(e, 0.0) + n_tr * per_tree_rate > capacity.get(e, np.inf) + TOL:
                ok = False
        if not ok:
            continue
        if all(_reaches(list(tr) + use.get(k, []), root, targets) for k, tr in enumerate(trees)):
            found.append(use)
    return found


def random_dyn_problem(n: int, seed=0, p_edge: float = 0.35) -> DynProblem:
    """Strongly connected random digraph with costs in [1, 5], no capacities."""
    import networkx as nx
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        G = nx.gnp_random_graph(n, p_edge, seed=int(rng.integers(2 ** 31)), directed=True)
        if nx.is_strongly_connected(G):
            break
    else:
        raise RuntimeError("could not draw a strongly connected graph")
    net = Hypernet(range(n), [(u, {v}) for u, v in sorted(G.edges())])
    cost = {a: float(rng.integers(1, 6)) for a in net.arcs}
    return DynProblem(net, 0, 1.0, cost)
