"""Feature files, manifests, Oxford-style ground truth and synthetic benchmarks.

Feature file layout (little endian)::

    header  : magic b"BRFT", u16 version, u8 kind (0 real, 1 binary), u8 pad,
              u32 dimension (d or bit length b), u32 count
    records : count x { f32 x, y, scale, orientation, response;
                        u8 has_affine; f32 a11, a12, a22;
                        descriptor (d x f32 | b/8 x u8) }

The record is a fixed-size numpy structured dtype, so files can be
memory-mapped.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .core import (
    BINARY,
    REAL,
    BoundingBox,
    DataError,
    ImageRecord,
    QuerySpec,
    UsageError,
    normalize_angle,
)

MAGIC = b"BRFT"
VERSION = 1
_HEADER = struct.Struct("<4sHBBII")
_KIND_CODE = {REAL: 0, BINARY: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def record_dtype(kind: str, dimension: int) -> np.dtype:
    if kind == REAL:
        desc = ("desc", "<f4", (dimension,))
    else:
        if dimension % 8:
            raise UsageError(f"binary bit length must be a multiple of 8, got {dimension}")
        desc = ("desc", "u1", (dimension // 8,))
    return np.dtype([
        ("x", "<f4"), ("y", "<f4"), ("scale", "<f4"), ("orientation", "<f4"),
        ("response", "<f4"), ("has_affine", "u1"), ("affine", "<f4", (3,)), desc,
    ])


def write_features(path, record: ImageRecord) -> None:
    dim = record.dimension
    dt = record_dtype(record.kind, dim)
    rows = np.zeros(len(record), dtype=dt)
    rows["x"] = record.xy[:, 0]
    rows["y"] = record.xy[:, 1]
    rows["scale"] = record.scale
    rows["orientation"] = record.orientation
    rows["response"] = record.response
    if record.affine is not None:
        rows["has_affine"] = 1
        rows["affine"] = record.affine
    if len(record):
        rows["desc"] = record.descriptors
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, _KIND_CODE[record.kind], 0, dim, len(record)))
        fh.write(rows.tobytes())


def read_features(path, image_id: Optional[str] = None) -> ImageRecord:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read feature file ({exc})") from exc
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header at offset 0")
    magic, version, kind_code, _, dim, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version} at offset 4")
    if kind_code not in _CODE_KIND:
        raise DataError(f"{path}: unknown descriptor kind {kind_code} at offset 6")
    kind = _CODE_KIND[kind_code]
    dt = record_dtype(kind, dim)
    expected = _HEADER.size + count * dt.itemsize
    if len(raw) != expected:
        bad = min(len(raw), expected)
        raise DataError(
            f"{path}: size mismatch at offset {bad} (header says {count} records, "
            f"expected {expected} bytes, found {len(raw)})"
        )
    rows = np.frombuffer(raw, dtype=dt, count=count, offset=_HEADER.size)
    has_aff = rows["has_affine"].astype(bool)
    if has_aff.any() and not has_aff.all():
        first = int(np.flatnonzero(~has_aff)[0])
        raise DataError(f"{path}: mixed affine flags at offset {_HEADER.size + first * dt.itemsize}")
    bad_scale = np.flatnonzero(~(rows["scale"] > 0))
    if len(bad_scale):
        first = int(bad_scale[0])
        raise DataError(f"{path}: non-positive scale at offset {_HEADER.size + first * dt.itemsize}")
    desc = rows["desc"] if count else np.zeros((0, dt["desc"].shape[0]), dtype=dt["desc"].base)
    return ImageRecord(
        image_id=image_id or path.stem,
        xy=np.stack([rows["x"], rows["y"]], axis=1).astype(np.float64),
        scale=rows["scale"].astype(np.float64),
        orientation=rows["orientation"].astype(np.float64),
        response=rows["response"].astype(np.float64),
        descriptors=desc,
        kind=kind,
        affine=rows["affine"].astype(np.float64) if count and has_aff.all() else None,
    )


def root_weight_descriptor(v) -> np.ndarray:
    """Component-wise square root, without the l1 normalization of RootSIFT."""
    v = np.asarray(v)
    if np.any(v < 0):
        raise UsageError("root weighting needs non-negative components")
    return np.sqrt(v)


@dataclass
class DatasetManifest:
    descriptor_kind: str
    dimension: int
    image_entries: list[tuple[str, str]]
    query_entries: list[tuple[str, str]] = field(default_factory=list)
    square_root_weighting: bool = False
    base_dir: Path = Path(".")
    source: Optional[Path] = None

    def __post_init__(self):
        if self.descriptor_kind not in (REAL, BINARY):
            raise UsageError(f"unknown descriptor kind {self.descriptor_kind!r}")
        ids = [i for i, _ in self.image_entries]
        if len(set(ids)) != len(ids):
            raise UsageError("manifest image ids must be unique")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: cannot parse manifest ({exc})") from exc
        try:
            return cls(
                descriptor_kind=doc["descriptor_kind"],
                dimension=int(doc["dimension"]),
                image_entries=[(e["image_id"], e["path"]) for e in doc.get("images", [])],
                query_entries=[(e["image_id"], e["path"]) for e in doc.get("query_images", [])],
                square_root_weighting=bool(doc.get("preprocessing", {}).get("square_root_weighting", False)),
                base_dir=path.parent,
                source=path.resolve(),
            )
        except KeyError as exc:
            raise DataError(f"{path}: manifest missing field {exc}") from exc

    def to_json(self) -> dict:
        return {
            "descriptor_kind": self.descriptor_kind,
            "dimension": self.dimension,
            "preprocessing": {"square_root_weighting": self.square_root_weighting},
            "images": [{"image_id": i, "path": p} for i, p in self.image_entries],
            "query_images": [{"image_id": i, "path": p} for i, p in self.query_entries],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p


def _load_entries(manifest: DatasetManifest, entries) -> list[ImageRecord]:
    out = []
    for image_id, rel in entries:
        rec = read_features(manifest.resolve(rel), image_id=image_id)
        if rec.kind != manifest.descriptor_kind:
            raise UsageError(
                f"{rel}: descriptor kind {rec.kind} does not match manifest kind {manifest.descriptor_kind}"
            )
        if len(rec) and rec.dimension != manifest.dimension:
            raise UsageError(f"{rel}: dimension {rec.dimension} != manifest dimension {manifest.dimension}")
        if manifest.square_root_weighting and rec.kind == REAL:
            rec = rec.with_descriptors(root_weight_descriptor(rec.descriptors))
        out.append(rec)
    return out


def load_dataset(manifest: DatasetManifest) -> list[ImageRecord]:
    return _load_entries(manifest, manifest.image_entries)


def load_query_images(manifest: DatasetManifest) -> dict[str, ImageRecord]:
    return {r.image_id: r for r in _load_entries(manifest, manifest.query_entries)}


def write_dataset(records, directory, manifest_name: str = "manifest.json", queries=(),
                  square_root_weighting: bool = False) -> DatasetManifest:
    """Write feature files plus a JSON manifest; returns the manifest."""
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    records = list(records)
    queries = list(queries)
    sample = (records or queries)
    kind = sample[0].kind if sample else REAL
    dim = sample[0].dimension if sample else 0
    entries, qentries = [], []
    for rec in records:
        rel = f"features/{rec.image_id}.brf"
        write_features(directory / rel, rec)
        entries.append((rec.image_id, rel))
    for rec in queries:
        rel = f"features/query_{rec.image_id}.brf"
        write_features(directory / rel, rec)
        qentries.append((rec.image_id, rel))
    manifest = DatasetManifest(kind, dim, entries, qentries, square_root_weighting, directory)
    manifest.save(directory / manifest_name)
    manifest.source = (directory / manifest_name).resolve()
    return manifest


# -- ground truth ---------------------------------------------------------

@dataclass(frozen=True)
class QueryTruth:
    name: str
    query_image_id: str
    bounding_box: Optional[BoundingBox]
    positive_ids: frozenset
    junk_ids: frozenset = frozenset()

    def __post_init__(self):
        overlap = self.positive_ids & self.junk_ids
        if overlap:
            raise DataError(f"query {self.name}: ids both positive and junk: {sorted(overlap)[:5]}")


@dataclass
class GroundTruth:
    queries: dict[str, QueryTruth] = field(default_factory=dict)

    def __len__(self):
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries.values())

    def __getitem__(self, name) -> QueryTruth:
        return self.queries[name]


def _read_ids(path: Path) -> list[str]:
    if not path.exists():
        return []
    return [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]


def _strip_prefix(image_id: str) -> str:
    # Oxford query files prefix ids with the collection tag
    return image_id[5:] if image_id.startswith("oxc1_") else image_id


def load_groundtruth(path) -> GroundTruth:
    """Parse a directory of <query>_{good,ok,junk,query}.txt files."""
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{path}: ground truth directory not found")
    gt = GroundTruth()
    for qfile in sorted(path.glob("*_query.txt")):
        name = qfile.name[: -len("_query.txt")]
        lines = [ln for ln in qfile.read_text().splitlines() if ln.strip()]
        if not lines:
            raise DataError(f"{qfile}: empty query file at offset 0")
        parts = lines[0].split()
        if len(parts) not in (1, 5):
            raise DataError(f"{qfile}: expected 'id x1 y1 x2 y2' at line 1")
        bbox = None
        if len(parts) == 5:
            try:
                bbox = BoundingBox(*map(float, parts[1:]))
            except ValueError as exc:
                raise DataError(f"{qfile}: bad bounding box at line 1 ({exc})") from exc
        good = _read_ids(path / f"{name}_good.txt")
        ok = _read_ids(path / f"{name}_ok.txt")
        junk = _read_ids(path / f"{name}_junk.txt")
        gt.queries[name] = QueryTruth(
            name=name,
            query_image_id=_strip_prefix(parts[0]),
            bounding_box=bbox,
            positive_ids=frozenset(good) | frozenset(ok),
            junk_ids=frozenset(junk),
        )
    return gt


def write_groundtruth(gt: GroundTruth, path, good_ok: Optional[dict] = None) -> None:
    """Write Oxford-format files. `good_ok` may map a query to (good, ok) lists."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for q in gt:
        if good_ok and q.name in good_ok:
            good, ok = good_ok[q.name]
        else:
            good, ok = sorted(q.positive_ids), []
        (path / f"{q.name}_good.txt").write_text("".join(f"{i}\n" for i in good))
        (path / f"{q.name}_ok.txt").write_text("".join(f"{i}\n" for i in ok))
        (path / f"{q.name}_junk.txt").write_text("".join(f"{i}\n" for i in sorted(q.junk_ids)))
        b = q.bounding_box
        box = "" if b is None else f" {b.x1!r} {b.y1!r} {b.x2!r} {b.y2!r}"
        (path / f"{q.name}_query.txt").write_text(f"{q.query_image_id}{box}\n")


# -- synthetic benchmark --------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the planted-object generator.

    Objects are keypoint constellations planted into `positives_per_object`
    database images under random similarity transforms. Every image also
    carries dense clutter clusters whose descriptors come from a shared pool
    of recurring patterns (repetitive texture) plus i.i.d. distractors.
    """

    num_images: int = 100
    features_per_image: int = 300
    num_objects: int = 10
    object_size: int = 40
    noise_sigma: float = 10.0
    rotation_range: tuple[float, float] = (-math.pi, math.pi)
    scale_range: tuple[float, float] = (0.5, 2.0)
    image_size: tuple[float, float] = (1024.0, 768.0)
    seed: int = 0
    descriptor_kind: str = REAL
    dimension: int = 128
    positives_per_object: int = 10
    visible_fraction: tuple[float, float] = (0.2, 1.0)
    object_radius: float = 120.0
    object_response: tuple[float, float] = (0.3, 1.3)
    keypoint_scale: float = 6.0
    keypoint_scale_spread: float = 0.2
    query_features: Optional[int] = 240
    clutter_fraction: float = 0.5
    clutter_cluster_size: int = 25
    clutter_radius: float = 25.0
    pattern_pool: int = 200
    pattern_sigma: float = 10.0
    bit_flip_rate: float = 0.05
    with_affine: bool = False

    def __post_init__(self):
        if self.object_size > self.features_per_image:
            raise UsageError("object_size must not exceed features_per_image")
        if self.object_size > self.n_query_features:
            raise UsageError("object_size must not exceed the query feature count")
        if self.noise_sigma < 0:
            raise UsageError("noise_sigma must be non-negative")
        if self.positives_per_object > self.num_images:
            raise UsageError("positives_per_object exceeds num_images")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise UsageError("scale range must be positive and ordered")

    @property
    def n_query_features(self) -> int:
        return self.query_features if self.query_features is not None else self.features_per_image


class Plant(NamedTuple):
    """Ground-truth record of one object instance planted in a database image.

    The transform maps query-image coordinates to database-image coordinates:
    p_db = scale * R(rotation) @ p_query + translation.
    """

    object_id: int
    image_id: str
    query_indices: np.ndarray
    db_indices: np.ndarray
    rotation: float
    scale: float
    translation: np.ndarray


class SyntheticDataset(NamedTuple):
    database: list
    groundtruth: GroundTruth
    queries: list
    plants: list


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


class _Generator:
    def __init__(self, cfg: SyntheticConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.width, self.height = cfg.image_size
        if cfg.descriptor_kind == REAL:
            self.patterns = self._random_desc(cfg.pattern_pool)

    def _random_desc(self, n: int) -> np.ndarray:
        cfg = self.cfg
        if cfg.descriptor_kind == REAL:
            return self.rng.uniform(0.0, 255.0, size=(n, cfg.dimension)).astype(np.float32)
        return self.rng.integers(0, 256, size=(n, cfg.dimension // 8), dtype=np.uint8)

    def _perturb(self, desc: np.ndarray, sigma: float) -> np.ndarray:
        cfg = self.cfg
        if cfg.descriptor_kind == REAL:
            if sigma == 0:
                return desc.copy()
            noisy = desc + self.rng.normal(0.0, sigma, size=desc.shape)
            return np.clip(noisy, 0.0, 255.0).astype(np.float32)
        rate = cfg.bit_flip_rate if sigma > 0 else 0.0
        flips = self.rng.random((desc.shape[0], desc.shape[1] * 8)) < rate
        return desc ^ np.packbits(flips, axis=1)

    def _scales(self, n: int) -> np.ndarray:
        cfg = self.cfg
        return cfg.keypoint_scale * np.exp(self.rng.normal(0.0, cfg.keypoint_scale_spread, size=n))

    def _affine(self, n: int) -> np.ndarray:
        # unit-determinant ellipses with random orientation and mild anisotropy
        ratio = np.exp(self.rng.uniform(-0.4, 0.4, size=n))
        phi = self.rng.uniform(0, math.pi, size=n)
        c, s = np.cos(phi), np.sin(phi)
        l1, l2 = ratio, 1.0 / ratio
        return np.stack([l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c], axis=1)

    def make_object(self):
        cfg = self.cfg
        r = cfg.object_radius * np.sqrt(self.rng.random(cfg.object_size))
        phi = self.rng.uniform(-math.pi, math.pi, cfg.object_size)
        local = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
        return {
            "xy": local,
            "scale": self._scales(cfg.object_size),
            "orientation": self.rng.uniform(-math.pi, math.pi, cfg.object_size),
            "response": self.rng.uniform(*cfg.object_response, cfg.object_size),
            "desc": self._random_desc(cfg.object_size),
            "affine": self._affine(cfg.object_size),
        }

    def clutter(self, n: int, lo=None, hi=None):
        """`n` filler keypoints in the box [lo, hi]: dense pattern clusters plus scattered distractors."""
        cfg = self.cfg
        lo = np.zeros(2) if lo is None else np.asarray(lo, dtype=np.float64)
        hi = np.array([self.width, self.height]) if hi is None else np.asarray(hi, dtype=np.float64)
        n_clustered = int(round(n * cfg.clutter_fraction))
        n_free = n - n_clustered
        parts_xy, parts_resp, parts_desc = [], [], []
        remaining = n_clustered
        while remaining > 0:
            m = min(cfg.clutter_cluster_size, remaining)
            centre = self.rng.uniform(lo, hi)
            parts_xy.append(centre + self.rng.normal(0.0, cfg.clutter_radius / 2, size=(m, 2)))
            parts_resp.append(self.rng.uniform(0.6, 1.6, m))
            if cfg.descriptor_kind == REAL:
                pick = self.rng.integers(0, cfg.pattern_pool, m)
                parts_desc.append(self._perturb(self.patterns[pick], cfg.pattern_sigma))
            else:
                parts_desc.append(self._random_desc(m))
            remaining -= m
        parts_xy.append(self.rng.uniform(lo, hi, size=(n_free, 2)))
        parts_resp.append(self.rng.uniform(0.0, 1.0, n_free))
        parts_desc.append(self._random_desc(n_free))
        return {
            "xy": np.concatenate(parts_xy).reshape(-1, 2),
            "scale": self._scales(n),
            "orientation": self.rng.uniform(-math.pi, math.pi, n),
            "response": np.concatenate(parts_resp),
            "desc": np.concatenate(parts_desc),
            "affine": self._affine(n),
        }

    def random_transform(self):
        cfg = self.cfg
        theta = float(self.rng.uniform(*cfg.rotation_range))
        lo, hi = cfg.scale_range
        lam = float(math.exp(self.rng.uniform(math.log(lo), math.log(hi))))
        margin = min(cfg.object_radius * lam, self.width / 3, self.height / 3)
        t = self.rng.uniform([margin, margin], [self.width - margin, self.height - margin])
        return theta, lam, t


def _assemble(image_id, parts, order, kind, with_affine) -> ImageRecord:
    cat = {key: np.concatenate([p[key] for p in parts])[order] for key in parts[0]}
    return ImageRecord(
        image_id=image_id,
        xy=cat["xy"],
        scale=cat["scale"],
        orientation=normalize_angle(cat["orientation"]),
        response=cat["response"],
        descriptors=cat["desc"],
        kind=kind,
        affine=cat["affine"] if with_affine else None,
    )


def _transform_parts(obj, idx, theta, lam, t):
    rot = _rot(theta)
    aff = obj["affine"][idx]
    # shape matrix of a rotated ellipse: R A R^T
    a = np.empty_like(aff)
    for j, (a11, a12, a22) in enumerate(aff):
        m = rot @ np.array([[a11, a12], [a12, a22]]) @ rot.T
        a[j] = (m[0, 0], m[0, 1], m[1, 1])
    return {
        "xy": lam * obj["xy"][idx] @ rot.T + t,
        "scale": lam * obj["scale"][idx],
        "orientation": normalize_angle(obj["orientation"][idx] + theta),
        "response": obj["response"][idx],
        "desc": obj["desc"][idx],
        "affine": a,
    }


def generate_synthetic(config: SyntheticConfig) -> SyntheticDataset:
    """Database, ground truth and queries with planted objects.

    Deterministic for a fixed seed. Each query image shows its object under an
    identity pose, centred in the frame, surrounded by clutter; the bounding
    box is the object's extent.
    """
    cfg = config
    gen = _Generator(cfg)
    rng = gen.rng
    objects = [gen.make_object() for _ in range(cfg.num_objects)]

    # assign positives: spread objects over images, at most ceil(P*O/N) per image
    slots = rng.permutation(cfg.num_images)
    holders = []
    cursor = 0
    for _ in range(cfg.num_objects):
        pick = [int(slots[(cursor + j) % cfg.num_images]) for j in range(cfg.positives_per_object)]
        cursor += cfg.positives_per_object
        holders.append(pick)
    per_image: dict[int, list[int]] = {}
    for oid, imgs in enumerate(holders):
        for im in imgs:
            per_image.setdefault(im, []).append(oid)

    # queries first so their local indices are known when planting
    queries, query_records = [], []
    centre = np.array([gen.width / 2, gen.height / 2])
    for oid, obj in enumerate(objects):
        all_idx = np.arange(cfg.object_size)
        part = _transform_parts(obj, all_idx, 0.0, 1.0, centre)
        # query clutter shares the object's box, as in a cropped query region
        n_clutter = cfg.n_query_features - cfg.object_size
        clutter = gen.clutter(n_clutter, centre - cfg.object_radius, centre + cfg.object_radius)
        order = rng.permutation(cfg.n_query_features)
        rec = _assemble(f"q{oid:03d}", [part, clutter], order, cfg.descriptor_kind, cfg.with_affine)
        inv = np.empty_like(order)
        inv[order] = np.arange(len(order))
        obj["query_index"] = inv[: cfg.object_size]
        lo = part["xy"].min(axis=0) - part["scale"].max()
        hi = part["xy"].max(axis=0) + part["scale"].max()
        box = BoundingBox(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
        query_records.append(rec)
        queries.append((rec, box))

    database, plants = [], []
    truth: dict[int, set] = {oid: set() for oid in range(cfg.num_objects)}
    for im in range(cfg.num_images):
        image_id = f"img{im:05d}"
        parts, planted = [], []
        used = 0
        for oid in per_image.get(im, []):
            obj = objects[oid]
            lo, hi = cfg.visible_fraction
            budget = cfg.features_per_image - used
            nvis = min(budget, max(1, int(round(rng.uniform(lo, hi) * cfg.object_size))))
            if nvis <= 0:
                continue
            idx = np.sort(rng.choice(cfg.object_size, nvis, replace=False))
            theta, lam, t = gen.random_transform()
            part = _transform_parts(obj, idx, theta, lam, t)
            part["desc"] = gen._perturb(part["desc"], cfg.noise_sigma)
            planted.append((oid, idx, used, theta, lam, t))
            parts.append(part)
            used += nvis
            truth[oid].add(image_id)
        parts.append(gen.clutter(cfg.features_per_image - used))
        order = rng.permutation(cfg.features_per_image)
        inv = np.empty_like(order)
        inv[order] = np.arange(cfg.features_per_image)
        database.append(_assemble(image_id, parts, order, cfg.descriptor_kind, cfg.with_affine))
        for oid, idx, start, theta, lam, t in planted:
            obj = objects[oid]
            # query pose is identity + centre translation; fold it into the transform
            trans = t - lam * (_rot(theta) @ centre)
            plants.append(Plant(
                object_id=oid,
                image_id=image_id,
                query_indices=obj["query_index"][idx],
                db_indices=inv[start: start + len(idx)],
                rotation=theta,
                scale=lam,
                translation=trans,
            ))

    gt = GroundTruth()
    specs = []
    for oid, (rec, box) in enumerate(queries):
        name = f"object{oid:03d}"
        gt.queries[name] = QueryTruth(name, rec.image_id, box, frozenset(truth[oid]), frozenset())
        specs.append(QuerySpec(image=rec, bounding_box=box, query_id=name))
    return SyntheticDataset(database, gt, specs, plants)


def manifest_identity(path) -> str:
    """Canonical identity of a manifest file, used to keep train and eval data apart."""
    return os.path.realpath(path)
