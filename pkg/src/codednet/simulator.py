"""Packet-level simulation of one coded session over a hypergraph.

Every node runs the coding scheme from ``codec``: the source emits random
combinations of its messages, relays emit random combinations of what they
hold, sinks decode by incremental elimination.  Injections follow either a
slotted model (hyperarc a fires in a slot with probability z_a) or independent
Poisson processes of rate z_a.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .codec import Echelon, NodeMemory, SinkDecoder, SourceNode
from .galois import FieldSpec
from .netmodel import Hypernet, LossModel, arc


@dataclass
class Connection:
    source: object
    sinks: list
    rate: float = 1.0


@dataclass
class SimConfig:
    K: int = 32
    m: int = 8
    payload_len: int = 2
    traffic: str = "slotted"          # "slotted" | "periodic" | "poisson"
    duration: float | None = None     # None: K / rate; math.inf: run until decoded
    max_time: float = 1e6
    memory: str = "unbounded"
    M: int | None = None
    filter_independent: bool = True
    stop_on_decode: bool = False
    mu: int | None = None             # innovation order for queue instrumentation
    track: tuple | None = None        # (relay, next node) observed by the instrumentation
    record_every: int = 1


@dataclass
class SessionStats:
    duration: float
    decoded: dict
    decode_time: dict
    rank_trace: dict
    received: dict
    transmissions: dict
    payload_ok: dict
    innovation_trace: list = field(default_factory=list)   # (tau, |U|, |W|)
    field_size: int = 256

    def all_decoded(self) -> bool:
        return all(self.decoded.values())

    def to_json(self) -> dict:
        return {
            "duration": self.duration,
            "decoded": {str(k): v for k, v in self.decoded.items()},
            "decode_time": {str(k): v for k, v in self.decode_time.items()},
            "received": {str(k): v for k, v in self.received.items()},
            "transmissions": {repr(k): v for k, v in self.transmissions.items()},
        }

    def rank_rows(self):
        """Rows (tau, rank_t1, rank_t2, ...) sampled at every recorded change."""
        sinks = list(self.rank_trace)
        times = sorted({tau for s in sinks for tau, _ in self.rank_trace[s]})
        idx = {s: 0 for s in sinks}
        cur = {s: 0 for s in sinks}
        rows = []
        for tau in times:
            for s in sinks:
                tr = self.rank_trace[s]
                while idx[s] < len(tr) and tr[idx[s]][0] <= tau:
                    cur[s] = tr[idx[s]][1]
                    idx[s] += 1
            rows.append([tau] + [cur[s] for s in sinks])
        return sinks, rows


def _subset_table(net: Hypernet, loss: LossModel):
    tab = {}
    if loss.kind == "aloha_relay":
        return tab
    for a in net.arcs:
        probs = loss.subset_probs(a)
        subsets = [K for K in probs]
        p = np.array([probs[K] for K in subsets], dtype=float)
        tab[a] = (subsets, np.cumsum(p) / max(p.sum(), 1e-300))
    return tab


def _draw(tab, a, u):
    subsets, cum = tab[a]
    return subsets[min(int(np.searchsorted(cum, u, side="right")), len(subsets) - 1)]


class _Tracker:
    """Counts |U| at a relay and the innovative set W at the next node."""

    def __init__(self, spec, relay, nxt, mu, cap):
        self.spec, self.relay, self.nxt, self.mu = spec, relay, nxt, mu
        self.U = 0
        self.W = Echelon(spec, cap)
        self.cap = cap

    def on_relay_receive(self):
        self.U += 1
        if self.U > self.cap:
            raise RuntimeError("innovation tracker capacity exceeded")

    def on_next_receive(self, beta):
        if self.U <= self.W.rank + self.mu - 1:
            return
        vec = np.zeros(self.cap, dtype=np.int64)
        vec[: beta.size] = beta
        if not self.W.contains(vec):
            self.W.insert(vec)


def run_session(net: Hypernet, loss: LossModel, z: dict, conn: Connection,
                cfg: SimConfig | None = None, seed=0) -> SessionStats:
    """Simulate one generation of K messages from conn.source to conn.sinks."""
    cfg = cfg or SimConfig()
    if cfg.traffic not in ("slotted", "periodic", "poisson"):
        raise ValueError(f"unknown traffic model {cfg.traffic!r}")
    if cfg.traffic != "poisson" and any(v > 1 for v in z.values()):
        raise ValueError("slotted injection probabilities must be <= 1")
    if loss.kind == "aloha_relay" and cfg.traffic != "slotted":
        raise ValueError("the collision channel is slotted")
    for a in z:
        if a not in net:
            raise KeyError(f"rate given for unknown hyperarc {a!r}")
    rng = np.random.default_rng(seed)
    spec = FieldSpec(cfg.m)
    K, lam = cfg.K, cfg.payload_len
    messages = spec.random(rng, (K, lam))
    duration = cfg.duration if cfg.duration is not None else math.ceil(K / conn.rate)
    rateless = math.isinf(duration)
    horizon = cfg.max_time if rateless else duration

    tracker = None
    if cfg.mu is not None:
        relay, nxt = cfg.track or _tandem_pair(net, conn.source)
        tracker = _Tracker(spec, relay, nxt, cfg.mu, cap=int(horizon * 2 + 8))

    source = SourceNode(spec, messages)
    sinks = {t: SinkDecoder(spec, K, lam) for t in conn.sinks}
    relays = {}
    for n in net.nodes:
        if n != conn.source and n not in sinks:
            no_filter = tracker is not None and n == tracker.relay
            relays[n] = NodeMemory(spec, K, lam, cfg.memory, cfg.M,
                                   cfg.filter_independent and not no_filter)

    def emitter(n):
        if n == conn.source:
            return source
        return sinks[n] if n in sinks else relays[n]

    decoded = {t: False for t in sinks}
    dtime = {t: None for t in sinks}
    rank_trace = {t: [(0.0, 0)] for t in sinks}
    received = {n: 0 for n in net.nodes}
    tx = {a: 0 for a in net.arcs}
    itrace = []
    tab = _subset_table(net, loss)

    def deliver(a, pkt, K_set, tau, beta):
        for j in sorted(K_set, key=str):
            if j == conn.source:
                continue
            received[j] += 1
            if j in sinks:
                if sinks[j].receive(pkt):
                    rank_trace[j].append((tau, sinks[j].rank))
                    if sinks[j].complete and not decoded[j]:
                        decoded[j] = True
                        dtime[j] = tau
            else:
                relays[j].receive(pkt, rng)
            if tracker is not None:
                if j == tracker.relay:
                    tracker.on_relay_receive()
                elif j == tracker.nxt and a.tail == tracker.relay and beta is not None:
                    tracker.on_next_receive(beta)

    def emit(a):
        node = emitter(a.tail)
        pkt = node.emit(rng)
        beta = None
        if tracker is not None and a.tail == tracker.relay and pkt is not None:
            beta = node.last_alpha
        return pkt, beta

    def done():
        return all(decoded.values())

    fan_in = {t: sum(1 for a in net.arcs if t in a.head) for t in sinks}

    def hopeless(tau):
        # every sink is decoded or can no longer reach rank K (at most one
        # innovative packet per incoming hyperarc per slot)
        left = horizon - tau
        return all(decoded[t] or sinks[t].rank + left * fan_in[t] < K for t in sinks)

    if cfg.traffic != "poisson":
        # slotted: each arc fires independently with probability z per slot;
        # periodic: each arc fires floor(tau z + phase) times by slot tau
        arcs = list(net.arcs)
        zs = np.array([z.get(a, 0.0) for a in arcs])
        phase = rng.random(len(arcs)) if cfg.traffic == "periodic" else None
        aloha = None
        if loss.kind == "aloha_relay":
            n1, n2, n3 = loss.aloha["nodes"]
            top, rel = arc(n1, {n2, n3}), arc(n2, n3)
            ks = [frozenset([n2]), frozenset([n3]), frozenset([n2, n3])]
            aloha = (top, rel, ks, np.cumsum([loss.aloha[k] for k in ks]), loss.aloha["relay"])
        tau = 0
        while tau < horizon:
            tau += 1
            if phase is None:
                fire = rng.random(len(arcs)) < zs
            else:
                fire = np.floor(tau * zs + phase) > np.floor((tau - 1) * zs + phase)
            sent = []
            for k in np.nonzero(fire)[0]:
                a = arcs[k]
                tx[a] += 1
                pkt, beta = emit(a)
                sent.append((a, pkt, beta))
            if aloha is not None:
                top, rel, ks, cum, p_rel = aloha
                if len(sent) == 1:
                    a, pkt, beta = sent[0]
                    u = rng.random()
                    if a == top:
                        idx = int(np.searchsorted(cum, u, side="right"))
                        rx = ks[idx] if idx < 3 else frozenset()
                    else:
                        rx = a.head if u < p_rel else frozenset()
                    if pkt is not None and rx:
                        deliver(a, pkt, rx, tau, beta)
            else:
                for a, pkt, beta in sent:
                    rx = _draw(tab, a, rng.random())
                    if pkt is not None and rx:
                        deliver(a, pkt, rx, tau, beta)
            if tracker is not None and tau % cfg.record_every == 0:
                itrace.append((tau, tracker.U, tracker.W.rank))
            if (rateless or cfg.stop_on_decode) and done():
                break
            if cfg.stop_on_decode and not rateless and hopeless(tau):
                break
        end = tau
    else:
        arcs = [a for a in net.arcs if z.get(a, 0.0) > 0]
        rates = np.array([z[a] for a in arcs])
        total = rates.sum()
        cum = np.cumsum(rates) / total if total > 0 else None
        tau = 0.0
        while total > 0:
            tau += rng.exponential(1.0 / total)
            if tau > horizon:
                break
            a = arcs[min(int(np.searchsorted(cum, rng.random(), side="right")), len(arcs) - 1)]
            tx[a] += 1
            pkt, beta = emit(a)
            rx = _draw(tab, a, rng.random())
            if pkt is not None and rx:
                deliver(a, pkt, rx, tau, beta)
            if tracker is not None:
                itrace.append((tau, tracker.U, tracker.W.rank))
            if (rateless or cfg.stop_on_decode) and done():
                break
        end = min(tau, horizon)

    payload_ok = {}
    for t, dec in sinks.items():
        out = dec.decode()
        payload_ok[t] = None if out is None else bool(np.array_equal(out, messages))
    return SessionStats(end, decoded, dtime, rank_trace, received, tx, payload_ok,
                        itrace, spec.q)


def _tandem_pair(net: Hypernet, s):
    first = [a for a in net.arcs if a.tail == s]
    if len(first) != 1 or len(first[0].head) != 1:
        raise ValueError("instrumentation needs a tandem; pass cfg.track explicitly")
    relay = next(iter(first[0].head))
    nxt = [a for a in net.arcs if a.tail == relay and s not in a.head]
    if len(nxt) != 1 or len(nxt[0].head) != 1:
        raise ValueError("instrumentation needs a tandem; pass cfg.track explicitly")
    return relay, next(iter(nxt[0].head))


def tandem(rates, loss_p=None) -> tuple[Hypernet, dict, LossModel]:
    """Line network 1 -> 2 -> ... -> L+1 with injection rates per link."""
    L = len(rates)
    net = Hypernet(range(1, L + 2), [(k, {k + 1}) for k in range(1, L + 1)])
    z = {a: float(r) for a, r in zip(net.arcs, rates)}
    if loss_p is None:
        return net, z, LossModel("lossless")
    p = {(a, k + 2): float(pk) for k, (a, pk) in enumerate(zip(net.arcs, loss_p))}
    return net, z, LossModel("iid", p=p)


def queue_prediction(z_in: float, z_out: float, mu: int, q: int) -> float:
    """Fluid growth rate of the innovative backlog at a relay."""
    return max(z_in - (1.0 - float(q) ** (-mu)) * z_out, 0.0)


@dataclass
class InnovationReport:
    slope: float
    predicted: float
    rel_error: float
    max_fluid_gap: float


def track_innovation(stats: SessionStats, z_in: float, z_out: float, mu: int,
                     q: int | None = None) -> InnovationReport:
    """Compare the measured backlog (|U| - |W| - mu + 1)^+ with the fluid line."""
    if not stats.innovation_trace:
        raise ValueError("session ran without instrumentation (set SimConfig.mu)")
    q = q or stats.field_size
    tr = np.array(stats.innovation_trace, dtype=float)
    tau, U, W = tr[:, 0], tr[:, 1], tr[:, 2]
    Q = np.maximum(U - W - mu + 1, 0.0)
    slope = float(np.dot(tau, Q) / np.dot(tau, tau))
    pred = queue_prediction(z_in, z_out, mu, q)
    rel = abs(slope - pred) / pred if pred > 0 else abs(slope)
    scale = max(tau[-1], 1.0)
    gap = float(np.max(np.abs(Q - pred * tau)) / scale)
    return InnovationReport(slope, pred, rel, gap)


def exponent_prediction(C: float, R: float) -> float:
    """Decay rate of the decoding-failure probability at rate R below capacity C."""
    if not 0 < R < C:
        raise ValueError("need 0 < R < C")
    return C - R - R * math.log(C / R)


def wilson(k: int, n: int, zval: float = 1.96):
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    d = 1 + zval ** 2 / n
    c = (p + zval ** 2 / (2 * n)) / d
    h = zval * math.sqrt(p * (1 - p) / n + zval ** 2 / (4 * n * n)) / d
    return (max(c - h, 0.0), min(c + h, 1.0))


@dataclass
class ExponentFit:
    slope: float
    stderr: float
    predicted: float
    points: list   # (delta, failures, trials, p_hat, lo, hi)


def _as_line(net: Hypernet, loss: LossModel, z: dict, s, t):
    """(rates, success probs) when net is the path s -> ... -> t, else None."""
    if loss.kind not in ("lossless", "iid"):
        return None
    rates, ps, node = [], [], s
    seen = {s}
    while node != t:
        out = [a for a in net.arcs if a.tail == node]
        if len(out) != 1 or len(out[0].head) != 1:
            return None
        a = out[0]
        nxt = next(iter(a.head))
        if nxt in seen:
            return None
        rates.append(z.get(a, 0.0))
        ps.append(1.0 if loss.kind == "lossless" else loss.success(a, nxt))
        seen.add(nxt)
        node = nxt
    if len(seen) != len(net.nodes) or len(net.arcs) != len(rates):
        return None
    return rates, ps


def estimate_error_exponent(net: Hypernet, loss: LossModel, z: dict, source, sink,
                            C: float, R: float, deltas, trials, seed=0, m: int = 8,
                            payload_len: int = 1, engine: str = "auto") -> ExponentFit:
    """Fit -log P(failure) against the session length under Poisson injections.

    engine "reference" runs ``run_session``; "fast" uses the compiled line
    network kernel; "auto" picks the kernel when the network is a line.
    """
    if isinstance(trials, int):
        trials = [trials] * len(deltas)
    line = _as_line(net, loss, z, source, sink) if engine != "reference" else None
    if engine == "fast" and line is None:
        raise ValueError("compiled path needs a line network")
    ss = np.random.SeedSequence(seed)
    pts = []
    for delta, n in zip(deltas, trials):
        K = math.ceil(R * delta - 1e-9)
        cfg = SimConfig(K=K, m=m, payload_len=payload_len, traffic="poisson",
                        duration=float(delta), stop_on_decode=True)
        fails = 0
        child = ss.spawn(1)[0]
        for sd in child.generate_state(n):
            if line is not None:
                ok, _ = line_session_fast(line[0], K, float(delta), line[1], m, seed=int(sd))
            else:
                st = run_session(net, loss, z, Connection(source, [sink], R), cfg, seed=int(sd))
                ok = st.decoded[sink]
            fails += not ok
        lo, hi = wilson(fails, n)
        pts.append((float(delta), fails, n, fails / n, lo, hi))
    use = [(d, f / n, f) for d, f, n, *_ in pts if f > 0]
    if len(use) < 2:
        raise ValueError("fewer than two grid points with observed failures")
    x = np.array([u[0] for u in use])
    y = -np.log([u[1] for u in use])
    w = np.array([u[2] for u in use], dtype=float)   # Var(log p_hat) ~ 1/failures
    X = np.column_stack([np.ones_like(x), x])
    Wm = np.diag(w)
    cov = np.linalg.inv(X.T @ Wm @ X)
    beta = cov @ X.T @ Wm @ y
    return ExponentFit(float(beta[1]), float(math.sqrt(cov[1, 1])),
                       exponent_prediction(C, R), pts)


# ---------------------------------------------------------------------------
# compiled path for line networks under Poisson injections (rank only, m <= 8)


@numba.njit(cache=True)
def _gf_mul8(flat, a, b):
    return flat[(np.uint16(a) << 8) | np.uint16(b)]


@numba.njit(cache=True)
def _insert(Bn, piv, r, v, K, flat, inv):
    for i in range(r):
        c = v[piv[i]]
        if c != 0:
            for k in range(K):
                v[k] ^= _gf_mul8(flat, c, Bn[i, k])
    p = -1
    for k in range(K):
        if v[k] != 0:
            p = k
            break
    if p < 0:
        return False
    s = inv[v[p]]
    for k in range(K):
        v[k] = _gf_mul8(flat, s, v[k])
    for i in range(r):
        c = Bn[i, p]
        if c != 0:
            for k in range(K):
                Bn[i, k] ^= _gf_mul8(flat, c, v[k])
    for k in range(K):
        Bn[r, k] = v[k]
    piv[r] = p
    return True


@numba.njit(cache=True)
def _line_poisson(K, q, rates, psucc, duration, flat, inv, seed):
    np.random.seed(seed)
    L = rates.shape[0]
    B = np.zeros((L + 1, K, K), dtype=np.uint8)
    piv = np.zeros((L + 1, K), dtype=np.int64)
    rank = np.zeros(L + 1, dtype=np.int64)
    cum = np.cumsum(rates)
    total = cum[-1]
    v = np.zeros(K, dtype=np.uint8)
    t = 0.0
    while True:
        t += -np.log(1.0 - np.random.random()) / total
        if t > duration:
            return False, duration
        u = np.random.random() * total
        l = 0
        while l < L - 1 and u >= cum[l]:
            l += 1
        if l == 0:
            for k in range(K):
                v[k] = np.random.randint(0, q)
        else:
            r = rank[l]
            if r == 0:
                continue
            for k in range(K):
                v[k] = 0
            for i in range(r):
                a = np.random.randint(0, q)
                if a != 0:
                    for k in range(K):
                        v[k] ^= _gf_mul8(flat, a, B[l, i, k])
        if np.random.random() >= psucc[l]:
            continue
        h = l + 1
        if _insert(B[h], piv[h], rank[h], v, K, flat, inv):
            rank[h] += 1
            if h == L and rank[h] == K:
                return True, t


def line_session_fast(rates, K: int, duration: float, loss_p=None, m: int = 8, seed: int = 0):
    """Decode outcome of one generation over a line network with Poisson
    injections, using compiled elimination.  Returns (decoded, time)."""
    if m > 8:
        raise ValueError("compiled path supports m <= 8")
    spec = FieldSpec(m)
    rates = np.asarray(rates, dtype=float)
    ps = np.ones_like(rates) if loss_p is None else np.asarray(loss_p, dtype=float)
    ok, t = _line_poisson(int(K), spec.q, rates, ps, float(duration), spec.tables.flat,
                          spec.tables.inv.astype(np.uint8), int(seed) % (2 ** 32))
    return bool(ok), float(t)
