"""k-means, product quantization and the inverted-file ADC index."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import REAL, ImageRecord, UsageError
from .storage import load_container, save_container

_CHUNK = 4096


def sq_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of x and rows of c."""
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _assign(x: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels = np.empty(len(x), dtype=np.int64)
    dist = np.empty(len(x), dtype=np.float64)
    for lo in range(0, len(x), _CHUNK):
        d = sq_distances(x[lo:lo + _CHUNK], c)
        lab = d.argmin(1)
        labels[lo:lo + _CHUNK] = lab
        # exact residual norms; the expanded form above loses precision near zero
        diff = x[lo:lo + _CHUNK] - c[lab]
        dist[lo:lo + _CHUNK] = (diff * diff).sum(1)
    return labels, dist


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = ((x - x[chosen[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            # only duplicates of chosen points remain
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(free[0])
        chosen.append(nxt)
        np.minimum(closest, ((x - x[nxt]) ** 2).sum(1), out=closest)
    return x[chosen].copy()


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    sse_history: list = field(default_factory=list)


def kmeans(sample, k: int, iters: int = 25, seed: int = 0) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are re-seeded at the points farthest from their centroids.
    `sse_history[t]` is the within-cluster SSE after the t-th assignment step.
    """
    x = np.ascontiguousarray(sample, dtype=np.float64)
    if x.ndim != 2:
        raise UsageError("k-means sample must be a 2-d array")
    if k < 1 or len(x) < k:
        raise UsageError(f"need at least k={k} samples, got {len(x)}")
    rng = np.random.default_rng(seed)
    c = _kmeans_pp(x, k, rng)
    labels, dist = _assign(x, c)
    history = [float(dist.sum())]
    for _ in range(iters):
        counts = np.bincount(labels, minlength=k)
        nonempty = counts > 0
        order = np.argsort(labels, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        sums = np.zeros_like(c)
        sums[nonempty] = np.add.reduceat(x[order], starts[nonempty], axis=0)
        c[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if len(empty):
            far = np.argsort(-dist, kind="stable")[: len(empty)]
            c[empty] = x[far]
        new_labels, dist = _assign(x, c)
        history.append(float(dist.sum()))
        if np.array_equal(new_labels, labels) and not len(empty):
            labels = new_labels
            break
        labels = new_labels
    return KMeansResult(c, labels, history)


def train_kmeans(sample, k: int, iters: int = 25, seed: int = 0) -> np.ndarray:
    return kmeans(sample, k, iters, seed).centroids


@dataclass(frozen=True)
class PqCodebooks:
    """m sub-codebooks of s centroids each, shape (m, s, d/m)."""

    centroids: np.ndarray

    def __post_init__(self):
        if self.centroids.ndim != 3:
            raise UsageError("PQ codebooks must have shape (m, s, d/m)")
        if self.s > 256:
            raise UsageError("at most 256 centroids per sub-codebook (one-byte codes)")

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def s(self) -> int:
        return self.centroids.shape[1]

    @property
    def dsub(self) -> int:
        return self.centroids.shape[2]

    @property
    def dimension(self) -> int:
        return self.m * self.dsub

    def blocks(self, x: np.ndarray) -> np.ndarray:
        """Reshape (N, d) to (N, m, d/m)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dimension:
            raise UsageError(f"vector dimension {x.shape[-1]} != codebook dimension {self.dimension}")
        return x.reshape(x.shape[0], self.m, self.dsub)

    def encode(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        xb = self.blocks(x)
        codes = np.empty((len(x), self.m), dtype=np.uint8)
        for b in range(self.m):
            for lo in range(0, len(x), _CHUNK):
                codes[lo:lo + _CHUNK, b] = sq_distances(xb[lo:lo + _CHUNK, b], self.centroids[b]).argmin(1)
        return codes

    def decode(self, codes) -> np.ndarray:
        codes = np.atleast_2d(codes)
        parts = [self.centroids[b][codes[:, b]] for b in range(self.m)]
        return np.concatenate(parts, axis=1)

    def lookup_table(self, q) -> np.ndarray:
        """(m, s) squared distances between query sub-blocks and centroids."""
        qb = np.asarray(q, dtype=np.float64).reshape(self.m, 1, self.dsub)
        return ((self.centroids - qb) ** 2).sum(axis=2)


def train_pq(sample, m: int = 8, s: int = 256, iters: int = 20, seed: int = 0) -> PqCodebooks:
    x = np.asarray(sample, dtype=np.float64)
    d = x.shape[1]
    if d % m:
        raise UsageError(f"m={m} must divide the dimension d={d}")
    dsub = d // m
    cents = np.stack([
        train_kmeans(x[:, b * dsub:(b + 1) * dsub], s, iters, seed + b) for b in range(m)
    ])
    return PqCodebooks(cents)


def encode_residual(v, coarse_cell: int, coarse: np.ndarray, codebooks: PqCodebooks) -> np.ndarray:
    """m-byte PQ code of v minus its coarse centroid."""
    r = np.asarray(v, dtype=np.float64) - coarse[coarse_cell]
    return codebooks.encode(r[None, :])[0]


@dataclass
class KnnResult:
    """Neighbours ascending by distance; parallel arrays."""

    ids: np.ndarray
    images: np.ndarray
    keypoints: np.ndarray
    distances: np.ndarray
    image_names: Sequence[str] = ()

    def __len__(self):
        return len(self.ids)

    @property
    def image_ids(self) -> list[str]:
        return [self.image_names[i] for i in self.images]

    def rows(self):
        for i in range(len(self.ids)):
            yield self.image_names[self.images[i]], int(self.keypoints[i]), float(self.distances[i])

    def take(self, n: int) -> "KnnResult":
        return KnnResult(self.ids[:n], self.images[:n], self.keypoints[:n], self.distances[:n], self.image_names)


def stack_features(records: Sequence[ImageRecord]):
    """Concatenate descriptors and build global-id -> (image, keypoint) maps."""
    sizes = [len(r) for r in records]
    image_of = np.repeat(np.arange(len(records), dtype=np.int32), sizes)
    kp_of = np.concatenate([np.arange(n, dtype=np.int32) for n in sizes]) if sizes else np.zeros(0, np.int32)
    desc = np.concatenate([r.descriptors for r in records]) if records else None
    return desc, image_of, kp_of, [r.image_id for r in records]


@dataclass(frozen=True)
class CodebookSet:
    """Everything learnt from the training collection for real-valued features."""

    coarse: np.ndarray
    residual_pq: PqCodebooks
    raw_pq: PqCodebooks

    def save(self, path) -> None:
        save_container(path, "codebooks", {}, {
            "coarse": self.coarse,
            "residual_pq": self.residual_pq.centroids,
            "raw_pq": self.raw_pq.centroids,
        })

    @classmethod
    def load(cls, path) -> "CodebookSet":
        _, _, arr = load_container(path, "codebooks")
        return cls(np.array(arr["coarse"]), PqCodebooks(np.array(arr["residual_pq"])), PqCodebooks(np.array(arr["raw_pq"])))


def train_codebooks(sample, num_cells: int = 2048, m: int = 8, s: int = 256,
                    iters: int = 20, seed: int = 0, max_sample: Optional[int] = 200_000) -> CodebookSet:
    """Coarse quantizer, residual PQ (indexing) and raw PQ (compression)."""
    x = np.asarray(sample, dtype=np.float64)
    if max_sample and len(x) > max_sample:
        x = x[np.sort(np.random.default_rng(seed).choice(len(x), max_sample, replace=False))]
    coarse = train_kmeans(x, num_cells, iters, seed)
    labels, _ = _assign(x, coarse)
    residual = train_pq(x - coarse[labels], m, s, iters, seed + 1000)
    raw = train_pq(x, m, s, iters, seed + 2000)
    return CodebookSet(coarse, residual, raw)


class IvfPqIndex:
    """Inverted file over coarse cells, residuals stored as PQ codes.

    `probes` counts knn_query calls, for query-budget accounting.
    """

    kind = REAL

    def __init__(self, coarse, codebooks: PqCodebooks, offsets, ids, codes, image_of, kp_of, image_names):
        self.coarse = np.asarray(coarse, dtype=np.float64)
        self.codebooks = codebooks
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.ids = np.asarray(ids, dtype=np.int64)
        self.codes = np.asarray(codes, dtype=np.uint8)
        self.image_of = np.asarray(image_of, dtype=np.int32)
        self.kp_of = np.asarray(kp_of, dtype=np.int32)
        self.image_names = list(image_names)
        self.probes = 0
        self._coarse_sq = (self.coarse ** 2).sum(1)
        self._cent_sq = (codebooks.centroids ** 2).sum(2)
        # code j of block b addresses entry b * s + j of a flattened (m, s) table
        self._flat_codes = self.codes.astype(np.int64) + np.arange(codebooks.m) * codebooks.s

    @classmethod
    def build(cls, records: Sequence[ImageRecord], coarse, codebooks: PqCodebooks) -> "IvfPqIndex":
        desc, image_of, kp_of, names = stack_features(records)
        coarse = np.asarray(coarse, dtype=np.float64)
        if desc is None or not len(desc):
            return cls(coarse, codebooks, np.zeros(len(coarse) + 1, np.int64), np.zeros(0, np.int64),
                       np.zeros((0, codebooks.m), np.uint8), image_of, kp_of, names)
        x = np.asarray(desc, dtype=np.float64)
        cells, _ = _assign(x, coarse)
        codes = codebooks.encode(x - coarse[cells])
        order = np.argsort(cells, kind="stable")
        counts = np.bincount(cells, minlength=len(coarse))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        return cls(coarse, codebooks, offsets, order, codes[order], image_of, kp_of, names)

    @property
    def num_cells(self) -> int:
        return len(self.coarse)

    def __len__(self) -> int:
        return len(self.ids)

    def cell_sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def cell_of(self, feature_id: int) -> int:
        pos = int(np.flatnonzero(self.ids == feature_id)[0])
        return int(np.searchsorted(self.offsets, pos, side="right") - 1)

    def nearest_cells(self, q: np.ndarray, c: int) -> np.ndarray:
        d = self._coarse_sq - 2.0 * self.coarse @ q + float(q @ q)
        return np.lexsort((np.arange(len(d)), d))[:c]

    def lookup_tables(self, q: np.ndarray, cells: np.ndarray) -> np.ndarray:
        """(len(cells), m, s) squared distances of each cell's query residual to the sub-centroids."""
        cb = self.codebooks
        r = (q[None, :] - self.coarse[cells]).reshape(len(cells), cb.m, cb.dsub)
        cross = np.einsum("cmd,msd->cms", r, cb.centroids)
        out = (r * r).sum(2)[:, :, None] - 2.0 * cross + self._cent_sq[None, :, :]
        return np.maximum(out, 0.0)

    def knn_query(self, q, k: int, multi_assign: int = 8) -> KnnResult:
        """Asymmetric-distance kNN over the `multi_assign` nearest cells."""
        self.probes += 1
        if k < 1:
            raise UsageError("k must be >= 1")
        if multi_assign < 1:
            raise UsageError("multi-assignment c must be >= 1")
        q = np.asarray(q, dtype=np.float64).ravel()
        cells = self.nearest_cells(q, min(multi_assign, self.num_cells))
        lo, hi = self.offsets[cells], self.offsets[cells + 1]
        lens = hi - lo
        total = int(lens.sum())
        if total == 0:
            empty = np.zeros(0, np.int64)
            return KnnResult(empty, empty, empty, np.zeros(0), self.image_names)
        # positions of all scanned entries, and which probed cell each came from
        starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
        pos = np.arange(total) + np.repeat(lo - starts, lens)
        cellpos = np.repeat(np.arange(len(cells)), lens)
        tables = self.lookup_tables(q, cells).ravel()
        stride = self.codebooks.m * self.codebooks.s
        d = tables[self._flat_codes[pos] + (cellpos * stride)[:, None]].sum(axis=1)
        ids = self.ids[pos]
        if len(d) > k:
            part = np.argpartition(d, k - 1)[:k]
            # keep every candidate tied with the k-th distance so id tie-breaking is exact
            part = np.flatnonzero(d <= d[part].max())
            ids, d = ids[part], d[part]
        order = np.lexsort((ids, d))[:k]
        ids, d = ids[order], d[order]
        return KnnResult(ids, self.image_of[ids], self.kp_of[ids], np.sqrt(d), self.image_names)

    def save(self, path) -> None:
        save_container(path, "ivfpq", {"image_names": self.image_names}, {
            "coarse": self.coarse, "pq": self.codebooks.centroids, "offsets": self.offsets,
            "ids": self.ids, "codes": self.codes, "image_of": self.image_of, "kp_of": self.kp_of,
        })

    @classmethod
    def from_container(cls, meta, arr) -> "IvfPqIndex":
        return cls(arr["coarse"], PqCodebooks(np.array(arr["pq"])), arr["offsets"], arr["ids"], arr["codes"],
                   arr["image_of"], arr["kp_of"], meta["image_names"])
