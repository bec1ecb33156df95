"""Coding with a finite memory of M packets at an isolated encoder or relay.

The encoder's innovation count x (packets it holds that the decoder lacks)
is a birth-death chain on {0..M}: an arrival (prob r) that is then lost on
the link (prob eps) moves it up, a successful transmission without an
arrival moves it down.  An arrival while x = M overwrites information.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class FiniteMemoryParams:
    r: float
    eps: float
    M: int

    def __post_init__(self):
        if not (0 < self.r < 1 and 0 < self.eps < 1):
            raise ValueError("arrival and erasure probabilities must lie in (0, 1)")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError("memory size must be a positive integer")
        if self.r >= 1 - self.eps:
            raise ValueError("unstable: arrival rate exceeds link throughput")

    @property
    def rho(self) -> float:
        return self.r * self.eps / ((1 - self.r) * (1 - self.eps))

    @property
    def sigma(self) -> float:
        return self.r / (1 - self.eps)


def steady_state(p: FiniteMemoryParams) -> np.ndarray:
    """Stationary distribution of the innovation count, states 0..M."""
    rho, sig, M = p.rho, p.sigma, p.M
    norm = 1 - sig * rho ** M
    pi = np.empty(M + 1)
    i = np.arange(M)
    pi[:M] = rho ** i * (1 - rho) / norm
    pi[M] = p.eps * sig * rho ** (M - 1) * (1 - rho) / norm
    return pi


def transition_matrix(p: FiniteMemoryParams) -> np.ndarray:
    """One-epoch transition matrix (arrival first, then transmission)."""
    r, e, M = p.r, p.eps, p.M
    P = np.zeros((M + 1, M + 1))
    for x in range(M + 1):
        for arr, pa in ((1, r), (0, 1 - r)):
            y = min(x + arr, M)
            if y > 0:
                P[x, y - 1] += pa * (1 - e)
                P[x, y] += pa * e
            else:
                P[x, y] += pa
    return P


def ruin_probs(p: FiniteMemoryParams) -> np.ndarray:
    """Probability of reaching state 0 from i before an arrival in state M."""
    rho, sig, M = p.rho, p.sigma, p.M
    i = np.arange(M + 1)
    return (1 - sig * rho ** (M - i)) / (1 - sig * rho ** M)


def loss_upper_bound(p: FiniteMemoryParams) -> float:
    """Closed-form bound on the packet loss probability (infinite field)."""
    rho, sig, M, e = p.rho, p.sigma, p.M, p.eps
    pre = rho ** (M - 1) / (1 - sig * rho ** M) ** 2
    body = (e * M * sig + (1 - 2 * sig + M * sig - 2 * e * M * sig) * rho
            - (1 - e) * M * sig * rho ** 2 + sig ** 2 * rho ** (M + 1))
    return pre * body


def loss_bound_from_ruin(p: FiniteMemoryParams) -> float:
    """The same bound assembled term by term from the ruin probabilities."""
    pi, qr = steady_state(p), ruin_probs(p)
    ok = sum(((1 - p.eps) * qr[i] + p.eps * qr[i + 1]) * pi[i] for i in range(p.M))
    return 1.0 - ok


def tandem_rate_loss(delta: float, eps: float, M: int) -> float:
    """Relative rate loss 1 - R/R* of a two-link tandem with a finite relay.

    The relay's innovation count is the isolated chain with r = 1 - delta,
    and a unit of throughput is lost exactly when it is full.
    """
    return float(steady_state(FiniteMemoryParams(1 - delta, eps, M))[-1])


# ---------------------------------------------------------------------------
# Monte Carlo


@numba.njit(cache=True)
def _chain_run(u, r, eps, M, q, nbatch):
    x = 0
    n = u.shape[0]
    lost = np.zeros(nbatch)
    decoded = np.zeros(nbatch)
    delay_sum = 0.0
    pend = 0
    pend_sum = 0.0
    for t in range(n):
        b = t * nbatch // n
        if u[t, 0] < r:
            if x == M or u[t, 1] >= 1.0 - q ** (x - M):
                lost[b] += pend + 1
                pend = 0
                pend_sum = 0.0
            else:
                x += 1
                pend += 1
                pend_sum += t
        if x > 0 and u[t, 2] < 1.0 - eps and u[t, 3] < 1.0 - q ** (-x):
            x -= 1
            if x == 0:
                decoded[b] += pend
                delay_sum += pend * t - pend_sum
                pend = 0
                pend_sum = 0.0
    return lost, decoded, delay_sum


@numba.njit(cache=True)
def _tandem_run(u, delta, eps, M, q, nbatch):
    x = 0
    n = u.shape[0]
    per = n // nbatch
    out = np.zeros(nbatch)
    for t in range(per * nbatch):
        if u[t, 0] < 1.0 - delta and x < M and u[t, 1] < 1.0 - q ** (x - M):
            x += 1
        if x > 0 and u[t, 2] < 1.0 - eps and u[t, 3] < 1.0 - q ** (-x):
            x -= 1
            out[t // per] += 1.0
    return out / per


@dataclass
class IsolatedResult:
    loss: float
    loss_stderr: float
    delay: float
    decoded: int
    lost: int


def ratio_stderr(num, den) -> float:
    """Batch-means standard error of sum(num) / sum(den)."""
    num, den = np.asarray(num, float), np.asarray(den, float)
    k = len(num)
    if k < 2 or den.sum() == 0:
        return math.inf
    ratio = num.sum() / den.sum()
    resid = (num - ratio * den) / den.mean()
    return float(math.sqrt(resid.var(ddof=1) / k))


def simulate_isolated(p: FiniteMemoryParams, q: int, N: int, mode: str = "shift",
                      seed=0, nbatch: int = 50) -> IsolatedResult:
    """Monte Carlo loss and delay (epochs from arrival to decoding).

    mode "shift": shift-register memory with an exact finite-field decoder.
    mode "chain": the innovation-count chain with finite-field innovation
    probabilities, used for accumulator memory.

    Losses arrive in bursts, so the standard error comes from batch means
    over ``nbatch`` stretches of epochs rather than a binomial formula.
    """
    rng = np.random.default_rng(seed)
    if mode == "chain":
        u = rng.random((int(N), 4))
        lost_b, dec_b, dsum = _chain_run(u, p.r, p.eps, p.M, float(q), nbatch)
    elif mode == "shift":
        lost_b, dec_b, dsum = _ShiftRegisterRun(p, q, rng).run(int(N), nbatch)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    lost, dec = int(np.sum(lost_b)), int(np.sum(dec_b))
    tot = lost + dec
    loss = lost / tot if tot else 0.0
    se = ratio_stderr(lost_b, np.add(lost_b, dec_b))
    delay = dsum / dec if dec else math.nan
    return IsolatedResult(loss, se, delay, dec, lost)


class _ShiftRegisterRun:
    """Encoder with the M most recent packets; decoder keeps an echelon basis
    over packet indices, with columns ordered by arrival."""

    def __init__(self, p: FiniteMemoryParams, q: int, rng):
        from .galois import FieldSpec
        m = int(round(math.log2(q)))
        if 1 << m != q:
            raise ValueError("field size must be a power of two")
        spec = FieldSpec(m)
        self.exp = spec.tables.exp.tolist()
        self.log = spec.tables.log.tolist()
        self.inv = spec.tables.inv.tolist()
        self.p, self.q, self.rng = p, q, rng

    def mul(self, a, b):
        if a == 0 or b == 0:
            return 0
        return self.exp[self.log[a] + self.log[b]]

    def run(self, N, nbatch: int = 1):
        p, rng, mul, inv = self.p, self.rng, self.mul, self.inv
        lost_b = np.zeros(nbatch)
        dec_b = np.zeros(nbatch)
        M = p.M
        arrive = rng.random(N) < p.r
        ok = rng.random(N) >= p.eps
        coef = rng.integers(0, self.q, size=(N, M)).tolist()
        memory = []          # packet ids, oldest first
        rows = {}            # pivot -> {col: coeff}, reduced echelon, cols ascending
        when = {}            # arrival epoch of each packet
        done = set()       # decoded packets still inside the window
        dsum = 0.0
        nxt = 0
        for t in range(N):
            b = t * nbatch // N
            if arrive[t]:
                when[nxt] = t
                memory.append(nxt)
                nxt += 1
                if len(memory) > M:
                    memory.pop(0)
                    lo = memory[0]
                    # columns below lo never appear again: a row whose pivot is
                    # old but which still mixes in another old packet is stuck
                    for c in [c for c in rows if c < lo]:
                        row = rows[c]
                        if c in done or any(k != c and k < lo for k in row):
                            del rows[c]
                    for c in [c for c in when if c < lo and c not in rows]:
                        lost_b[b] += 1
                        del when[c]
            if not ok[t] or not memory:
                continue
            v = {}
            for k, pid in enumerate(memory):
                a = coef[t][k]
                if a:
                    v[pid] = a
            if not v:
                continue
            for c in sorted(v):
                if c in rows and c in v:
                    f = v[c]
                    for k, val in rows[c].items():
                        nv = v.get(k, 0) ^ mul(f, val)
                        if nv:
                            v[k] = nv
                        else:
                            v.pop(k, None)
            if not v:
                continue
            piv = min(v)
            s = inv[v[piv]]
            v = {k: mul(s, val) for k, val in v.items()}
            touched = [piv]
            for c, row in rows.items():
                f = row.get(piv)
                if f:
                    for k, val in v.items():
                        nv = row.get(k, 0) ^ mul(f, val)
                        if nv:
                            row[k] = nv
                        else:
                            row.pop(k, None)
                    touched.append(c)
            rows[piv] = v
            for c in touched:
                if c not in done and len(rows[c]) == 1:
                    done.add(c)
                    dec_b[b] += 1
                    dsum += t - when.pop(c)
        return lost_b, dec_b, dsum


def write_loss_csv(path, records):
    """records: iterable of (M, q, loss, delay)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["M", "q", "loss", "delay"])
        for rec in records:
            w.writerow(rec)


def write_rate_csv(path, records):
    """records: iterable of (M, q, rate_loss)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["M", "q", "rate_loss"])
        for rec in records:
            w.writerow(rec)


@dataclass
class TandemResult:
    rate_loss: float
    stderr: float
    rate: float


def simulate_tandem(delta: float, eps: float, M: int, q: int, N: int, seed=0,
                    nbatch: int = 200) -> TandemResult:
    """Two-link tandem with a finite-memory relay: 1 - R_e / (1 - delta)."""
    if not (0 < delta < 1 and 0 < eps < 1) or M < 1:
        raise ValueError("bad tandem parameters")
    rng = np.random.default_rng(seed)
    u = rng.random((int(N), 4))
    rates = _tandem_run(u, delta, eps, int(M), float(q), nbatch)
    loss = 1.0 - rates / (1 - delta)
    return TandemResult(float(loss.mean()), float(loss.std(ddof=1) / math.sqrt(nbatch)),
                        float(rates.mean()))
