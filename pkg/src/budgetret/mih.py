"""Exact Hamming kNN by multi-index hashing.

Codes are split into t disjoint s-bit substrings, each indexed in its own
table. A query probes every table at substring radius 0, 1, 2, ... . After
radius r has been probed in all tables, any code not yet seen differs from
the query in at least r + 1 bits per substring, hence in >= t * (r + 1) bits
overall; the search stops as soon as the current k-th distance is below that
bound.
"""
from __future__ import annotations

import math
from functools import lru_cache
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .core import BINARY, UsageError, hamming_many
from .pq import KnnResult
from .storage import save_container

MAX_SUBSTRING_BITS = 32


@lru_cache(maxsize=None)
def _popcounts(bits: int) -> np.ndarray:
    return np.bitwise_count(np.arange(1 << bits, dtype=np.uint32))


@lru_cache(maxsize=256)
def flip_masks(bits: int, radius: int) -> np.ndarray:
    """All `bits`-wide values with exactly `radius` bits set (uint64)."""
    if radius > bits:
        return np.zeros(0, dtype=np.uint64)
    if bits <= 20:
        return np.flatnonzero(_popcounts(bits) == radius).astype(np.uint64)
    if radius == 0:
        return np.zeros(1, dtype=np.uint64)
    pos = np.array(list(combinations(range(bits), radius)), dtype=np.uint64)
    return np.bitwise_or.reduce(np.left_shift(np.uint64(1), pos), axis=1)


def substrings(codes: np.ndarray, t: int) -> np.ndarray:
    """(N, t) uint64 substring values of packed codes, most significant bit first."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.uint8))
    bits = np.unpackbits(codes, axis=1)
    b = bits.shape[1]
    s = b // t
    weights = np.left_shift(np.uint64(1), np.arange(s - 1, -1, -1, dtype=np.uint64))
    out = np.empty((len(codes), t), dtype=np.uint64)
    for i in range(t):
        out[:, i] = bits[:, i * s:(i + 1) * s].astype(np.uint64) @ weights
    return out


def default_num_tables(bits: int, n: int) -> int:
    """Pick t so the substring length is close to log2(n), within 32 bits."""
    target = max(1.0, math.log2(max(n, 2)))
    options = [t for t in range(1, bits + 1) if bits % t == 0 and bits // t <= MAX_SUBSTRING_BITS]
    return min(options, key=lambda t: (abs(bits // t - target), -(bits // t)))


class _Table:
    __slots__ = ("keys", "starts", "ids")

    def __init__(self, values: np.ndarray):
        order = np.argsort(values, kind="stable")
        sorted_vals = values[order]
        self.keys, first = np.unique(sorted_vals, return_index=True)
        self.starts = np.append(first, len(values)).astype(np.int64)
        self.ids = order.astype(np.int64)

    def lookup(self, values: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.keys, values)
        inside = pos < len(self.keys)
        pos = pos[inside]
        pos = pos[self.keys[pos] == values[inside]]
        if not len(pos):
            return np.zeros(0, dtype=np.int64)
        lo, hi = self.starts[pos], self.starts[pos + 1]
        lens = hi - lo
        # concatenate ranges [lo, hi) without a python loop
        offs = np.repeat(lo - np.concatenate([[0], np.cumsum(lens)[:-1]]), lens)
        return self.ids[np.arange(lens.sum()) + offs]

    def occupied(self) -> int:
        return len(self.keys)

    def total(self) -> int:
        return len(self.ids)


class MihIndex:
    kind = BINARY

    def __init__(self, codes, t: int, image_of=None, kp_of=None, image_names: Sequence[str] = ()):
        codes = np.asarray(codes, dtype=np.uint8)
        if codes.ndim != 2:
            raise UsageError("codes must be an (N, bytes) array")
        self.codes = codes
        self.bits = codes.shape[1] * 8
        if t < 1 or self.bits % t:
            raise UsageError(f"t={t} must divide the code length {self.bits}")
        if self.bits // t > MAX_SUBSTRING_BITS:
            raise UsageError(f"substring length {self.bits // t} exceeds {MAX_SUBSTRING_BITS} bits")
        self.t = t
        self.s = self.bits // t
        n = len(codes)
        self.image_of = np.zeros(n, np.int32) if image_of is None else np.asarray(image_of, np.int32)
        self.kp_of = np.arange(n, dtype=np.int32) if kp_of is None else np.asarray(kp_of, np.int32)
        self.image_names = list(image_names) or [""]
        subs = substrings(codes, t) if n else np.zeros((0, t), np.uint64)
        self.tables = [_Table(subs[:, i]) for i in range(t)]
        self.probes = 0

    def __len__(self) -> int:
        return len(self.codes)

    def knn_query_exact(self, q, k: int) -> KnnResult:
        self.probes += 1
        if k < 1:
            raise UsageError("k must be >= 1")
        q = np.asarray(q, dtype=np.uint8).ravel()
        if q.size * 8 != self.bits:
            raise UsageError(f"query has {q.size * 8} bits, index has {self.bits}")
        n = len(self.codes)
        qsub = substrings(q[None, :], self.t)[0]
        seen = np.zeros(n, dtype=bool)
        ids_parts, dist_parts = [], []
        n_seen = 0
        kth = None
        for radius in range(self.s + 1):
            masks = flip_masks(self.s, radius)
            for i, table in enumerate(self.tables):
                hits = table.lookup(np.bitwise_xor(qsub[i], masks))
                if not len(hits):
                    continue
                new = np.unique(hits[~seen[hits]])
                if not len(new):
                    continue
                seen[new] = True
                n_seen += len(new)
                ids_parts.append(new)
                dist_parts.append(hamming_many(self.codes[new], q))
            if n_seen >= min(k, n):
                d = np.concatenate(dist_parts) if dist_parts else np.zeros(0, np.int64)
                kth = np.partition(d, min(k, len(d)) - 1)[min(k, len(d)) - 1] if len(d) else 0
                if n_seen == n or kth < self.t * (radius + 1):
                    break
        if not ids_parts:
            empty = np.zeros(0, np.int64)
            return KnnResult(empty, empty, empty, np.zeros(0), self.image_names)
        ids = np.concatenate(ids_parts)
        d = np.concatenate(dist_parts)
        order = np.lexsort((ids, d))[:k]
        ids, d = ids[order], d[order]
        return KnnResult(ids, self.image_of[ids], self.kp_of[ids], d.astype(np.float64), self.image_names)

    # uniform surface with IvfPqIndex
    def knn_query(self, q, k: int, multi_assign: Optional[int] = None) -> KnnResult:
        return self.knn_query_exact(q, k)

    def save(self, path) -> None:
        save_container(path, "mih", {"t": self.t, "image_names": self.image_names}, {
            "codes": self.codes, "image_of": self.image_of, "kp_of": self.kp_of,
        })

    @classmethod
    def from_container(cls, meta, arr) -> "MihIndex":
        return cls(np.array(arr["codes"]), meta["t"], arr["image_of"], arr["kp_of"], meta["image_names"])


def build_mih(codes, t: Optional[int] = None, image_of=None, kp_of=None, image_names=()) -> MihIndex:
    codes = list(codes) if not isinstance(codes, np.ndarray) else codes
    if isinstance(codes, list):
        lengths = {len(np.asarray(c).ravel()) for c in codes}
        if len(lengths) > 1:
            raise UsageError(f"codes have non-uniform lengths: {sorted(lengths)}")
        codes = np.array([np.asarray(c, dtype=np.uint8).ravel() for c in codes], dtype=np.uint8)
    if t is None:
        t = default_num_tables(codes.shape[1] * 8, len(codes))
    return MihIndex(codes, t, image_of, kp_of, image_names)
