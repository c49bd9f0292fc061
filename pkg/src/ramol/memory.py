"""Fixed-capacity FIFO memory with exact K-nearest-neighbour retrieval.

Entries are ``(x, y, h, t)``: the input, its label, the hidden embedding the
model produced for it at insertion time, and the step it was inserted at.
Embeddings are never recomputed after insertion.

Storage is a ring of preallocated arrays.  While the buffer is filling,
slots ``[0, size)`` are used in order; once full, every slot is live and
``_head`` points at the oldest entry.  Retrieval does not depend on slot
order, only on the stored timestamps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator

import numpy as np

SNAPSHOT_FORMAT = "ramol-buffer"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class MemoryEntry:
    x: np.ndarray
    y: int
    h: np.ndarray
    t: int


class Buffer:
    def __init__(self, capacity: int, input_dim: int, hidden_dim: int):
        if capacity <= 0:
            raise ValueError("buffer capacity must be positive")
        self.capacity = capacity
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self._x = np.zeros((capacity, input_dim))
        self._y = np.zeros(capacity, dtype=np.int64)
        self._h = np.zeros((capacity, hidden_dim))
        self._t = np.zeros(capacity, dtype=np.int64)
        self._size = 0
        self._head = 0
        self._last_t: int | None = None

    def __len__(self) -> int:
        return self._size

    def insert(self, entry: MemoryEntry) -> "Buffer":
        self.insert_arrays(entry.x, entry.y, entry.h, entry.t)
        return self

    def insert_arrays(self, x: np.ndarray, y: int, h: np.ndarray, t: int) -> None:
        if np.shape(x) != (self.input_dim,) or np.shape(h) != (self.hidden_dim,):
            raise ValueError(
                f"entry shapes x{np.shape(x)} h{np.shape(h)} do not match "
                f"buffer dims ({self.input_dim}, {self.hidden_dim})"
            )
        if t < 0 or (self._last_t is not None and t <= self._last_t):
            raise ValueError(f"insertion step {t} is not after the previous one ({self._last_t})")
        if self._size < self.capacity:
            slot = self._size
            self._size += 1
        else:
            slot = self._head
            self._head = (self._head + 1) % self.capacity
        self._x[slot] = x
        self._y[slot] = y
        self._h[slot] = h
        self._t[slot] = t
        self._last_t = t

    def _order(self) -> np.ndarray:
        return (self._head + np.arange(self._size)) % self.capacity

    def entries(self) -> list[MemoryEntry]:
        """Stored entries, oldest first (copies)."""
        return [
            MemoryEntry(self._x[i].copy(), int(self._y[i]), self._h[i].copy(), int(self._t[i]))
            for i in self._order()
        ]

    def __iter__(self) -> Iterator[MemoryEntry]:
        return iter(self.entries())

    @property
    def oldest_t(self) -> int | None:
        if self._size == 0:
            return None
        return int(self._t[self._head if self._size == self.capacity else 0])

    def timestamps(self) -> np.ndarray:
        return self._t[self._order()].copy()

    def to_dict(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "capacity": self.capacity,
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "entries": [
                {"t": e.t, "y": e.y, "x": e.x.tolist(), "h": e.h.tolist()} for e in self.entries()
            ],
        }

    def export_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, data: dict) -> "Buffer":
        if data.get("format") != SNAPSHOT_FORMAT or data.get("version") != SNAPSHOT_VERSION:
            raise ValueError("not a supported buffer snapshot")
        buf = cls(data["capacity"], data["input_dim"], data["hidden_dim"])
        for e in data["entries"]:
            buf.insert_arrays(np.asarray(e["x"], float), e["y"], np.asarray(e["h"], float), e["t"])
        return buf


def insert(buffer: Buffer, entry: MemoryEntry) -> Buffer:
    return buffer.insert(entry)


@dataclass
class NeighbourSet:
    """Retrieved neighbours, nearest first.

    ``s`` and ``w`` stay ``None`` until :func:`similarity_weights` fills them.
    """

    x: np.ndarray
    y: np.ndarray
    h: np.ndarray
    t: np.ndarray
    d: np.ndarray
    s: np.ndarray | None = None
    w: np.ndarray | None = None

    def __len__(self) -> int:
        return self.d.shape[0]

    @classmethod
    def empty(cls, input_dim: int, hidden_dim: int) -> "NeighbourSet":
        return cls(
            np.zeros((0, input_dim)),
            np.zeros(0, dtype=np.int64),
            np.zeros((0, hidden_dim)),
            np.zeros(0, dtype=np.int64),
            np.zeros(0),
        )

    def subset(self, keep: np.ndarray) -> "NeighbourSet":
        return NeighbourSet(
            self.x[keep], self.y[keep], self.h[keep], self.t[keep], self.d[keep],
            None if self.s is None else self.s[keep],
            None if self.w is None else self.w[keep],
        )

    def items(self) -> list[tuple[MemoryEntry, float, float | None, float | None]]:
        out = []
        for i in range(len(self)):
            entry = MemoryEntry(self.x[i], int(self.y[i]), self.h[i], int(self.t[i]))
            s = None if self.s is None else float(self.s[i])
            w = None if self.w is None else float(self.w[i])
            out.append((entry, float(self.d[i]), s, w))
        return out


def retrieve(buffer: Buffer, h_query, t_now: int, K: int, H: int | None = None) -> NeighbourSet:
    """Exact K nearest stored embeddings to ``h_query`` by Euclidean distance.

    With a window ``H`` only entries with ``t_now - t <= H`` are eligible.
    Equal distances are ordered most recent first.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    q = np.asarray(h_query, dtype=float)
    if q.shape != (buffer.hidden_dim,):
        raise ValueError(f"query of shape {q.shape} does not match hidden dim {buffer.hidden_dim}")
    n = len(buffer)
    t = buffer._t[:n]
    idx = None
    if H is not None and n and t_now - buffer.oldest_t > H:
        idx = np.flatnonzero(t_now - t <= H)
        if idx.size == 0:
            return NeighbourSet.empty(buffer.input_dim, buffer.hidden_dim)
        emb = buffer._h[idx]
        t = t[idx]
    elif n == 0:
        return NeighbourSet.empty(buffer.input_dim, buffer.hidden_dim)
    else:
        emb = buffer._h[:n]
    diff = emb - q
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))

    if d.shape[0] > K:
        # everything tied with the K-th smallest distance stays in play for the tie-break
        kth = np.partition(d, K - 1)[K - 1]
        cand = np.flatnonzero(d <= kth)
    else:
        cand = np.arange(d.shape[0])
    order = cand[np.lexsort((-t[cand], d[cand]))][:K]
    slots = order if idx is None else idx[order]
    return NeighbourSet(
        buffer._x[slots], buffer._y[slots], buffer._h[slots], buffer._t[slots], d[order]
    )


def similarity_weights(ns: NeighbourSet, tau: float) -> NeighbourSet:
    """Fill ``s = exp(-d / tau)`` and ``w = s / sum(s)``."""
    if len(ns) == 0:
        raise ValueError("cannot weight an empty neighbour set")
    if not tau > 0:
        raise ValueError("tau must be positive")
    s = np.exp(-ns.d / tau)
    # shift by the nearest distance so w survives even when every s underflows
    r = np.exp(-(ns.d - ns.d.min()) / tau)
    w = r / r.sum()
    return NeighbourSet(ns.x, ns.y, ns.h, ns.t, ns.d, s, w)


def uniform_weights(ns: NeighbourSet) -> NeighbourSet:
    n = len(ns)
    if n == 0:
        raise ValueError("cannot weight an empty neighbour set")
    return NeighbourSet(ns.x, ns.y, ns.h, ns.t, ns.d, np.ones(n), np.full(n, 1.0 / n))


def similarity_gate(ns: NeighbourSet, rho: float, renormalize: bool = True) -> NeighbourSet:
    """Drop neighbours whose weight is below ``rho`` times the largest weight."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    if len(ns) == 0:
        return ns
    if ns.w is None:
        raise ValueError("neighbour weights not computed")
    keep = ns.w >= rho * ns.w.max()
    if keep.all():
        out = NeighbourSet(ns.x, ns.y, ns.h, ns.t, ns.d, ns.s, ns.w)
    else:
        out = ns.subset(keep)
    if renormalize:
        out.w = out.w / out.w.sum()
    return out
