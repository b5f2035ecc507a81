"""Image-level match expansion around kNN seed correspondences.

For a seed pair (p_q, p_D), the keypoints around p_q in the query image and
around p_D in the database image are rotation-normalized with respect to
their reference keypoint and compared pairwise: a neighbour pair is accepted
when its positional angles, gradient angles (optional), compressed
descriptor distance and scale-normalized spatial distances agree. None of
this touches the kNN index; it only reads the two images involved.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    BINARY,
    REAL,
    TWO_PI,
    Correspondence,
    DataError,
    ImageRecord,
    Keypoint,
    UsageError,
    angle_difference,
    hamming_many,
    normalize_angle,
)
from .pq import PqCodebooks
from .storage import load_container, save_container

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

# images with more keypoints than this get a kd-tree for range queries
KDTREE_MIN_POINTS = 256
# neighbourhood pairs below this count are compared densely instead of swept
DENSE_PAIR_LIMIT = 4096


@dataclass(frozen=True)
class ExpansionParams:
    """Expansion thresholds. Angles are in degrees; `delta_r=None` disables the gradient check."""

    delta_xy: float = 6.0
    delta_s: float = 0.8
    delta_dv: float = 26.2
    delta_alpha: float = 24.3
    delta_r: Optional[float] = None
    delta_dxy: float = 0.49
    max_depth: int = 1
    affine: bool = True

    def __post_init__(self):
        if not self.delta_xy > 0:
            raise UsageError("delta_xy must be positive")
        if not 0 < self.delta_s < 1:
            raise UsageError("delta_s must lie in (0, 1)")
        if not 0 < self.delta_dxy <= 1:
            raise UsageError("delta_dxy must lie in (0, 1]")
        if self.delta_dv < 0:
            raise UsageError("delta_dv must be non-negative")
        if not 0 < self.delta_alpha <= 180:
            raise UsageError("delta_alpha must lie in (0, 180] degrees")
        if self.delta_r is not None and not 0 < self.delta_r <= 180:
            raise UsageError("delta_r must lie in (0, 180] degrees")
        if not 0 <= self.max_depth <= 2:
            raise UsageError("max_depth must be 0, 1 or 2")

    @property
    def alpha_rad(self) -> float:
        return math.radians(self.delta_alpha)

    @property
    def r_rad(self) -> Optional[float]:
        return None if self.delta_r is None else math.radians(self.delta_r)

    def with_(self, **kw) -> "ExpansionParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExpansionParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"unknown expansion parameters: {sorted(unknown)}")
        doc = dict(doc)
        if doc.get("delta_r") in ("--", "", "none"):
            doc["delta_r"] = None
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExpansionParams":
        path = Path(path)
        try:
            text = path.read_text()
            doc = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        except (OSError, ValueError) as exc:
            raise DataError(f"{path}: cannot parse parameter file ({exc})") from exc
        return cls.from_dict(doc.get("expansion", doc))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


# reference thresholds for SIFT (Paris6k, Oxford5k) and BinBoost (Paris6k); also the tuning seeds
SIFT_P6K = ExpansionParams(6.0, 0.8, 26.2, 24.3, None, 0.49)
SIFT_O5K = ExpansionParams(6.0, 0.8, 26.9, 18.9, None, 0.56)
BINBOOST_P6K = ExpansionParams(4.0, 0.8, 73.0, 21.1, 26.0, 0.46)
PRESETS = {"sift-p6k": SIFT_P6K, "sift-o5k": SIFT_O5K, "binboost-p6k": BINBOOST_P6K}


# -- compressed descriptor store -----------------------------------------

class CompressedStore:
    """Per-image descriptor codes used for distance checks during expansion.

    Real-valued descriptors are product quantized as-is (no coarse residual)
    so any two database vectors can be compared through an (m, s, s) table
    of squared inter-centroid distances. Binary descriptors are kept raw and
    compared by Hamming distance.
    """

    def __init__(self, kind: str, codes: dict, codebooks: Optional[PqCodebooks] = None):
        self.kind = kind
        self.codes = codes
        self.codebooks = codebooks
        self.table = None
        if kind == REAL:
            if codebooks is None:
                raise UsageError("real-valued store needs PQ codebooks")
            c = codebooks.centroids
            self.table = ((c[:, :, None, :] - c[:, None, :, :]) ** 2).sum(-1)
            self._rows = np.arange(codebooks.m)

    @property
    def bytes_per_descriptor(self) -> int:
        sample = next(iter(self.codes.values()), None)
        if sample is not None:
            return sample.shape[1] * sample.itemsize
        return self.codebooks.m if self.kind == REAL else 0

    def encode(self, descriptors) -> np.ndarray:
        if self.kind == REAL:
            return self.codebooks.encode(descriptors)
        return np.asarray(descriptors, dtype=np.uint8)

    def codes_of(self, image: ImageRecord) -> np.ndarray:
        if image.codes is not None:
            return image.codes
        stored = self.codes.get(image.image_id)
        if stored is not None and len(stored) == len(image):
            return stored
        return self.encode(image.descriptors)

    def attach(self, image: ImageRecord) -> ImageRecord:
        """Copy of `image` carrying its compressed codes."""
        return image.with_codes(self.codes_of(image))

    def pair_distances(self, codes_a: np.ndarray, codes_b: np.ndarray) -> np.ndarray:
        """Row-wise approximate distances between two (P, m) code arrays."""
        codes_a = np.atleast_2d(codes_a)
        codes_b = np.atleast_2d(codes_b)
        if self.kind == BINARY:
            return np.bitwise_count(codes_a ^ codes_b).sum(axis=1).astype(np.float64)
        sq = self.table[self._rows, codes_a, codes_b].sum(axis=1)
        return np.sqrt(sq)

    def save(self, path) -> None:
        names = list(self.codes)
        sizes = np.array([len(self.codes[n]) for n in names], dtype=np.int64)
        width = self.codebooks.m if self.kind == REAL else (next(iter(self.codes.values())).shape[1] if names else 0)
        flat = np.concatenate([self.codes[n] for n in names]) if names else np.zeros((0, width), np.uint8)
        arrays = {"sizes": sizes, "codes": flat}
        if self.kind == REAL:
            arrays["pq"] = self.codebooks.centroids
        save_container(path, "store", {"descriptor_kind": self.kind, "image_names": names}, arrays)

    @classmethod
    def load(cls, path) -> "CompressedStore":
        _, meta, arr = load_container(path, "store")
        names = meta["image_names"]
        splits = np.cumsum(arr["sizes"])[:-1]
        codes = dict(zip(names, np.split(np.array(arr["codes"]), splits))) if names else {}
        cb = PqCodebooks(np.array(arr["pq"])) if meta["descriptor_kind"] == REAL else None
        return cls(meta["descriptor_kind"], codes, cb)


def compress_store(database, codebooks: Optional[PqCodebooks] = None) -> CompressedStore:
    database = list(database)
    kind = database[0].kind if database else (REAL if codebooks is not None else BINARY)
    if kind == REAL:
        if codebooks is None:
            raise UsageError("compressing real-valued descriptors needs PQ codebooks")
        codes = {r.image_id: codebooks.encode(r.descriptors) if len(r) else np.zeros((0, codebooks.m), np.uint8)
                 for r in database}
    else:
        codes = {r.image_id: np.array(r.descriptors, dtype=np.uint8) for r in database}
    return CompressedStore(kind, codes, codebooks)


def approx_feature_distance(store: CompressedStore, image_a: ImageRecord, idx_a: int,
                            image_b: ImageRecord, idx_b: int) -> float:
    ca = store.codes_of(image_a)[idx_a]
    cb = store.codes_of(image_b)[idx_b]
    return float(store.pair_distances(ca[None, :], cb[None, :])[0])


# -- spatial neighbourhoods -----------------------------------------------

def _tree(image: ImageRecord) -> cKDTree:
    tree = image.__dict__.get("_kdtree")
    if tree is None:
        tree = cKDTree(image.xy)
        object.__setattr__(image, "_kdtree", tree)
    return tree


def _ref_index(ref) -> int:
    return ref.descriptor_id if isinstance(ref, Keypoint) else int(ref)


def spatial_neighbors(image: ImageRecord, ref, params: ExpansionParams) -> np.ndarray:
    """Indices of keypoints within range of `ref` that pass the scale-ratio test.

    Range is ref.scale * delta_xy, Euclidean; when the image carries affine
    shapes and `params.affine` is set, the Mahalanobis distance under ref's
    shape matrix is used instead. Both bounds are closed.
    """
    i = _ref_index(ref)
    radius = image.scale[i] * params.delta_xy
    use_affine = params.affine and image.affine is not None
    if use_affine:
        a11, a12, a22 = image.affine[i]
        # ellipse {d : d^T A d <= r^2} lies inside the disc of radius r / sqrt(lambda_min)
        lam_min = 0.5 * (a11 + a22) - math.sqrt(0.25 * (a11 - a22) ** 2 + a12 * a12)
        search = radius / math.sqrt(lam_min)
    else:
        search = radius
    if len(image) > KDTREE_MIN_POINTS:
        cand = np.asarray(_tree(image).query_ball_point(image.xy[i], search * (1 + 1e-12)), dtype=np.int64)
    else:
        cand = np.arange(len(image))
    cand = cand[cand != i]
    d = image.xy[cand] - image.xy[i]
    if use_affine:
        dist2 = a11 * d[:, 0] ** 2 + 2 * a12 * d[:, 0] * d[:, 1] + a22 * d[:, 1] ** 2
    else:
        dist2 = (d * d).sum(1)
    s_ref = image.scale[i]
    s_n = image.scale[cand]
    ratio = np.minimum(s_n, s_ref) / np.maximum(s_n, s_ref)
    keep = (dist2 <= radius * radius) & (ratio >= params.delta_s)
    return np.sort(cand[keep])


class _Hood:
    """Rotation-normalized neighbourhood of one reference keypoint."""

    __slots__ = ("idx", "alpha", "grad", "rho")

    def __init__(self, image: ImageRecord, ref: int, params: ExpansionParams):
        idx = spatial_neighbors(image, ref, params)
        d = image.xy[idx] - image.xy[ref]
        r_ref = image.orientation[ref]
        self.idx = idx
        if len(idx):
            self.alpha = normalize_angle(np.arctan2(d[:, 1], d[:, 0]) - r_ref)
            self.grad = normalize_angle(image.orientation[idx] - r_ref)
        else:
            self.alpha = self.grad = np.zeros(0)
        self.rho = np.sqrt((d * d).sum(1)) / image.scale[ref]


class HoodCache:
    """Neighbourhood cache for expansion.

    Query-side entries live for one query; database-side entries may be shared
    across queries (they only depend on the image and the geometric thresholds).
    """

    def __init__(self, shared: Optional[dict] = None):
        self.query: dict = {}
        self.database: dict = {} if shared is None else shared


def _hood(cache: Optional[HoodCache], side: str, image: ImageRecord, ref: int, params: ExpansionParams) -> _Hood:
    if cache is None:
        return _Hood(image, ref, params)
    store = cache.query if side == "q" else cache.database
    key = (image.image_id, ref, params.delta_xy, params.delta_s, params.affine)
    hood = store.get(key)
    if hood is None:
        hood = store[key] = _Hood(image, ref, params)
    return hood


def angular_window_pairs(alpha_q: np.ndarray, alpha_d: np.ndarray, window: float):
    """Sweep over angle-sorted lists: all (i, j) with circular |alpha_q[i] - alpha_d[j]| <= window.

    The database list is sorted once and padded on both ends with copies
    shifted by 2*pi, so each query angle maps to one contiguous slice.
    """
    nq, nd = len(alpha_q), len(alpha_d)
    if not nq or not nd:
        e = np.zeros(0, np.int64)
        return e, e
    if window >= math.pi:
        return np.repeat(np.arange(nq), nd), np.tile(np.arange(nd), nq)
    if nq * nd <= DENSE_PAIR_LIMIT:
        # small neighbourhoods: one dense comparison beats the sweep's overhead
        diff = np.abs(np.mod(alpha_q[:, None] - alpha_d[None, :] + math.pi, TWO_PI) - math.pi)
        qi, dj = np.nonzero(diff <= window)
        return qi, dj
    order = np.argsort(alpha_d, kind="stable")
    a = alpha_d[order]
    low_tail = a >= math.pi - window    # wrap to the front
    high_head = a < -math.pi + window   # wrap to the back
    ext_a = np.concatenate([a[low_tail] - TWO_PI, a, a[high_head] + TWO_PI])
    ext_j = np.concatenate([order[low_tail], order, order[high_head]])
    # slack so the circular test below, not the sweep bounds, decides the boundary
    eps = 1e-9
    lo = np.searchsorted(ext_a, alpha_q - window - eps, side="left")
    hi = np.searchsorted(ext_a, alpha_q + window + eps, side="right")
    lens = hi - lo
    qi = np.repeat(np.arange(nq), lens)
    offs = np.repeat(lo - np.concatenate([[0], np.cumsum(lens)[:-1]]), lens)
    dj = ext_j[np.arange(lens.sum()) + offs]
    keep = np.abs(angle_difference(alpha_q[qi], alpha_d[dj])) <= window
    return qi[keep], dj[keep]


def expand_match(seed: Correspondence, query_image: ImageRecord, db_image: ImageRecord,
                 store: CompressedStore, params: ExpansionParams, cache: Optional[HoodCache] = None) -> list:
    """Seed followed by the neighbour pairs accepted around it (one-to-one)."""
    out = [seed]
    hq = _hood(cache, "q", query_image, seed.query_idx, params)
    if not len(hq.idx):
        return out
    hd = _hood(cache, "d", db_image, seed.db_idx, params)
    if not len(hd.idx):
        return out
    qi, dj = angular_window_pairs(hq.alpha, hd.alpha, params.alpha_rad)
    if not len(qi):
        return out
    keep = np.ones(len(qi), dtype=bool)
    if params.r_rad is not None:
        keep &= np.abs(angle_difference(hq.grad[qi], hd.grad[dj])) <= params.r_rad
    rq, rd = hq.rho[qi], hd.rho[dj]
    keep &= np.minimum(rq, rd) >= params.delta_dxy * np.maximum(rq, rd)
    qi, dj = qi[keep], dj[keep]
    if not len(qi):
        return out
    q_idx, d_idx = hq.idx[qi], hd.idx[dj]
    dist = store.pair_distances(store.codes_of(query_image)[q_idx], store.codes_of(db_image)[d_idx])
    keep = dist <= params.delta_dv
    if not keep.any():
        return out
    q_idx, d_idx, dist = q_idx[keep], d_idx[keep], dist[keep]
    dalpha = np.abs(angle_difference(hq.alpha[qi[keep]], hd.alpha[dj[keep]]))
    order = np.lexsort((d_idx, q_idx, dist, dalpha))
    used_q, used_d = set(), set()
    depth = seed.depth + 1
    for o in order:
        a, b = int(q_idx[o]), int(d_idx[o])
        if a in used_q or b in used_d:
            continue
        used_q.add(a)
        used_d.add(b)
        out.append(Correspondence(a, seed.db_image, b, float(dist[o]), seed.seed_distance,
                                  seed.seed_knn_distance, False, depth))
    return out


def expand_recursive(seed: Correspondence, query_image: ImageRecord, db_image: ImageRecord,
                     store: CompressedStore, params: ExpansionParams, cache: Optional[HoodCache] = None) -> list:
    """Breadth-first expansion: accepted pairs above max_depth become new references."""
    if params.max_depth == 0:
        return [seed]
    out = [seed]
    used_q, used_d = {seed.query_idx}, {seed.db_idx}
    frontier = [seed]
    for _ in range(params.max_depth):
        nxt = []
        for ref in frontier:
            for c in expand_match(ref, query_image, db_image, store, params, cache)[1:]:
                if c.query_idx in used_q or c.db_idx in used_d:
                    continue
                used_q.add(c.query_idx)
                used_d.add(c.db_idx)
                out.append(c)
                nxt.append(c)
        frontier = nxt
        if not frontier:
            break
    return out
