"""Random linear coding of one generation: source, relay memory, sink decoder.

A coded packet carries a payload (a vector of field elements) and its global
encoding vector (gev) over the K source messages.  Relays store received
packets in one of three memory disciplines and emit uniform random linear
combinations of what they hold.
"""
from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from .galois import FieldSpec, rref

HEADER = struct.Struct("<QHB")


class MalformedPacket(ValueError):
    pass


@dataclass
class CodedPacket:
    payload: np.ndarray
    gev: np.ndarray
    generation_id: int = 0

    def to_bytes(self, spec: FieldSpec) -> bytes:
        gev = np.asarray(self.gev, dtype=np.int64)
        K = gev.size
        if K >= 1 << 16:
            raise ValueError("generation too large for the 2-byte header field")
        head = HEADER.pack(int(self.generation_id), K, spec.m)
        return head + pack_bits(gev, spec.m) + pack_words(self.payload, spec.m)

    @classmethod
    def from_bytes(cls, data: bytes) -> tuple["CodedPacket", FieldSpec]:
        if len(data) < HEADER.size:
            raise MalformedPacket("packet shorter than header")
        gid, K, m = HEADER.unpack_from(data)
        spec = FieldSpec(m)
        nb = (K * m + 7) // 8
        body = data[HEADER.size:]
        if len(body) < nb:
            raise MalformedPacket("truncated encoding vector")
        gev = unpack_bits(body[:nb], K, m)
        payload = unpack_words(body[nb:], m)
        return cls(payload, gev, gid), spec


def header_overhead_bits(K: int, m: int) -> int:
    """Bits spent on the encoding vector in each packet."""
    return K * m


def pack_bits(values, m: int) -> bytes:
    """Pack m-bit values LSB-first into a little-endian bit stream."""
    v = np.asarray(values, dtype=np.int64).ravel()
    bits = ((v[:, None] >> np.arange(m)) & 1).astype(np.uint8).ravel()
    return np.packbits(bits, bitorder="little").tobytes()


def unpack_bits(data: bytes, count: int, m: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    bits = bits[: count * m].reshape(count, m).astype(np.int64)
    return (bits << np.arange(m)).sum(axis=1)


def _word_dtype(m: int):
    return np.dtype("<u1") if m <= 8 else np.dtype("<u2")


def pack_words(values, m: int) -> bytes:
    return np.asarray(values, dtype=np.int64).astype(_word_dtype(m)).tobytes()


def unpack_words(data: bytes, m: int) -> np.ndarray:
    dt = _word_dtype(m)
    if len(data) % dt.itemsize:
        raise MalformedPacket("payload length is not a whole number of symbols")
    out = np.frombuffer(data, dtype=dt).astype(np.int64)
    if out.size and out.max() >= 1 << m:
        raise MalformedPacket("payload symbol outside the field")
    return out


class Echelon:
    """Incrementally maintained reduced row echelon basis.

    Columns [0, ncols) are pivot columns (the encoding vector); any further
    columns are carried along (payload).
    """

    def __init__(self, spec: FieldSpec, ncols: int, extra: int = 0):
        self.spec = spec
        self.ncols = ncols
        self.rows = np.zeros((ncols, ncols + extra), dtype=spec.dtype)
        self.pivots: list[int] = []
        self._piv = np.zeros(ncols, dtype=np.intp)

    @property
    def rank(self) -> int:
        return len(self.pivots)

    def reduce(self, vec: np.ndarray) -> np.ndarray:
        r = self.rank
        v = np.array(vec, dtype=self.spec.dtype)
        if r == 0:
            return v
        c = v[self._piv[:r]]
        nz = np.nonzero(c)[0]
        if nz.size == 0:
            return v
        return v ^ self.spec.dot(c[nz], self.rows[nz])

    def contains(self, vec) -> bool:
        return not self.reduce(vec)[: self.ncols].any()

    def insert(self, vec) -> bool:
        """Add a row; returns True when it enlarged the span."""
        v = self.reduce(vec)
        nz = np.nonzero(v[: self.ncols])[0]
        if nz.size == 0:
            return False
        p = int(nz[0])
        v = self.spec.mul(self.spec.tables.inv[v[p]], v)
        r = self.rank
        if r:
            col = self.rows[:r, p]
            hit = np.nonzero(col)[0]
            if hit.size:
                self.rows[hit] ^= self.spec.mul(col[hit][:, None], v[None, :])
        self.rows[r] = v
        self._piv[r] = p
        self.pivots.append(p)
        return True


class NodeMemory:
    """Packet store of a relay node.

    mode: "unbounded" (optionally keeping only packets that enlarge the span),
    "shift_register" (the M most recent packets) or "accumulator" (M slots,
    each updated with a random multiple of every arrival).
    """

    def __init__(self, spec: FieldSpec, K: int, payload_len: int = 0,
                 mode: str = "unbounded", M: int | None = None,
                 filter_independent: bool = True):
        if mode not in ("unbounded", "shift_register", "accumulator"):
            raise ValueError(f"unknown memory mode {mode!r}")
        if mode != "unbounded" and (M is None or M < 1):
            raise ValueError("finite memory needs M >= 1")
        self.spec, self.K, self.lam = spec, K, payload_len
        self.mode, self.M, self.filter = mode, M, filter_independent
        width = K + payload_len
        if mode == "unbounded":
            self._rows = np.zeros((K if filter_independent else 16, width), dtype=spec.dtype)
            self._n = 0
            self._ech = Echelon(spec, K)
        elif mode == "shift_register":
            self._fifo: deque = deque(maxlen=M)
        else:
            self._slots = np.zeros((M, width), dtype=spec.dtype)
        self.received = 0

    @property
    def stored(self) -> np.ndarray:
        """Stored rows (gev followed by payload)."""
        if self.mode == "unbounded":
            return self._rows[: self._n]
        if self.mode == "shift_register":
            if not self._fifo:
                return np.zeros((0, self.K + self.lam), dtype=self.spec.dtype)
            return np.array(self._fifo)
        return self._slots

    @property
    def innovation_rank(self) -> int:
        if self.mode == "unbounded":
            return self._ech.rank
        rows = self.stored
        if rows.shape[0] == 0:
            return 0
        return len(rref(rows[:, : self.K], self.spec)[1])

    def receive(self, pkt: CodedPacket, rng=None) -> bool:
        """Store a packet; returns True when it was innovative for this node."""
        if np.asarray(pkt.gev).size != self.K:
            raise MalformedPacket(f"expected {self.K} gev entries")
        row = np.concatenate([np.asarray(pkt.gev), np.asarray(pkt.payload)]).astype(self.spec.dtype)
        self.received += 1
        if self.mode == "unbounded":
            new = self._ech.insert(row[: self.K])
            if new or not self.filter:
                if self._n == self._rows.shape[0]:
                    self._rows = np.vstack([self._rows, np.zeros_like(self._rows)])
                self._rows[self._n] = row
                self._n += 1
            return new
        before = self.innovation_rank
        if self.mode == "shift_register":
            self._fifo.append(row)
        else:
            if rng is None:
                raise ValueError("accumulator memory needs a random generator")
            r = self.spec.random(rng, self.M)
            self._slots ^= self.spec.mul(r[:, None], row[None, :])
        return self.innovation_rank > before

    def emit(self, rng, generation_id: int = 0) -> CodedPacket | None:
        rows = self.stored
        if rows.shape[0] == 0:
            return None
        alpha = self.spec.random(rng, rows.shape[0])
        self.last_alpha = alpha
        out = self.spec.dot(alpha, rows)
        return CodedPacket(out[self.K:], out[: self.K], generation_id)


class SourceNode:
    """Holds the K messages with unit encoding vectors."""

    def __init__(self, spec: FieldSpec, messages: np.ndarray, generation_id: int = 0):
        self.spec = spec
        self.messages = np.atleast_2d(np.asarray(messages)).astype(spec.dtype)
        self.K = self.messages.shape[0]
        self.generation_id = generation_id

    def emit(self, rng) -> CodedPacket:
        alpha = self.spec.random(rng, self.K)
        return CodedPacket(self.spec.dot(alpha, self.messages), alpha, self.generation_id)


class SinkDecoder:
    """Gaussian elimination performed packet by packet."""

    def __init__(self, spec: FieldSpec, K: int, payload_len: int = 0):
        self.spec, self.K, self.lam = spec, K, payload_len
        self._ech = Echelon(spec, K, payload_len)
        self.received = 0

    @property
    def rank(self) -> int:
        return self._ech.rank

    @property
    def complete(self) -> bool:
        return self.rank == self.K

    def receive(self, pkt: CodedPacket) -> bool:
        if np.asarray(pkt.gev).size != self.K or np.asarray(pkt.payload).size != self.lam:
            raise MalformedPacket("packet dimensions do not match the decoder")
        self.received += 1
        return self._ech.insert(np.concatenate([pkt.gev, pkt.payload]))

    def emit(self, rng, generation_id: int = 0) -> CodedPacket | None:
        """Uniform random element of the received span (lets sinks relay)."""
        r = self.rank
        if r == 0:
            return None
        alpha = self.spec.random(rng, r)
        out = self.spec.dot(alpha, self._ech.rows[:r])
        return CodedPacket(out[self.K:], out[: self.K], generation_id)

    def decode(self) -> np.ndarray | None:
        """Recovered messages (K x payload_len) or None while rank-deficient."""
        if not self.complete:
            return None
        order = np.argsort(self._ech.pivots)
        return self._ech.rows[order, self.K:].copy()


def encode(memory, rng, generation_id: int = 0) -> CodedPacket | None:
    """Emit one coded packet from a source or relay."""
    return memory.emit(rng) if isinstance(memory, SourceNode) else memory.emit(rng, generation_id)


def store(memory: NodeMemory, pkt: CodedPacket, rng=None) -> bool:
    return memory.receive(pkt, rng)


def decode(sink: SinkDecoder) -> np.ndarray | None:
    return sink.decode()
