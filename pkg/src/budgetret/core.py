"""Domain types and elementary distance/angle helpers.

Images are stored column-wise (one numpy array per keypoint attribute) so the
ranking, indexing and expansion stages can work on whole images at once.
`Keypoint` objects are materialized on demand for callers that want a record
view of a single interest point.

Orientation convention: radians, counter-clockwise, normalized to [-pi, pi).
Feature ingestion must follow the same convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

TWO_PI = 2.0 * math.pi
REAL = "real"
BINARY = "binary"


class UsageError(ValueError):
    """Invalid arguments or inconsistent inputs supplied by the caller."""


class DataError(RuntimeError):
    """Malformed or inconsistent data found on disk."""


def normalize_angle(theta):
    """Wrap an angle (scalar or array) into [-pi, pi)."""
    arr = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"angle must be finite, got {theta!r}")
    out = np.mod(arr + math.pi, TWO_PI) - math.pi
    # fmod rounding can land exactly on +pi for inputs just below an odd multiple
    out = np.where(out >= math.pi, out - TWO_PI, out)
    if out.ndim == 0:
        return float(out)
    return out


def angle_difference(a, b):
    """Signed circular difference a - b in [-pi, pi)."""
    return normalize_angle(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(math.sqrt(float(np.dot(diff.ravel(), diff.ravel()))))


def hamming_distance(a, b) -> int:
    """Number of differing bits between two packed (uint8) bit strings."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise UsageError(f"bit length mismatch: {a.size * 8} vs {b.size * 8}")
    return int(np.bitwise_count(np.bitwise_xor(a, b)).sum())


def hamming_many(codes: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamming distance of every row of `codes` (N x bytes) to `q`."""
    return np.bitwise_count(np.bitwise_xor(codes, q)).sum(axis=1, dtype=np.int64)


@dataclass(frozen=True)
class Keypoint:
    """One interest point; `affine` is (a11, a12, a22) of a symmetric 2x2 shape matrix."""

    x: float
    y: float
    scale: float
    orientation: float
    response: float = 0.0
    affine: Optional[tuple[float, float, float]] = None
    descriptor_id: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise UsageError(f"keypoint scale must be positive, got {self.scale}")
        if not -math.pi <= self.orientation < math.pi:
            raise UsageError(f"orientation {self.orientation} outside [-pi, pi)")
        if self.affine is not None:
            validate_affine(np.asarray(self.affine, dtype=np.float64)[None, :])


def validate_affine(affine: np.ndarray, tol: float = 1e-6) -> None:
    a11, a12, a22 = affine[:, 0], affine[:, 1], affine[:, 2]
    det = a11 * a22 - a12 * a12
    if np.any(a11 <= 0) or np.any(det <= 0):
        raise UsageError("affine shape matrix must be positive definite")
    if np.any(np.abs(det - 1.0) > tol):
        raise UsageError("affine shape matrix must have unit determinant")


def _frozen(arr, dtype=None) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """Keypoints and descriptors of one image.

    `descriptors` is (N, d) float32 for real-valued features and (N, b/8)
    uint8 for binary ones. `codes` optionally holds the compressed
    representation used during match expansion.
    """

    image_id: str
    xy: np.ndarray
    scale: np.ndarray
    orientation: np.ndarray
    response: np.ndarray
    descriptors: np.ndarray
    kind: str = REAL
    affine: Optional[np.ndarray] = None
    codes: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.scale)
        set_ = object.__setattr__
        set_(self, "xy", _frozen(np.reshape(self.xy, (n, 2)), np.float64))
        set_(self, "scale", _frozen(self.scale, np.float64))
        set_(self, "orientation", _frozen(self.orientation, np.float64))
        set_(self, "response", _frozen(self.response, np.float64))
        if self.kind == REAL:
            desc = _frozen(self.descriptors, np.float32)
        elif self.kind == BINARY:
            desc = _frozen(self.descriptors, np.uint8)
        else:
            raise UsageError(f"unknown descriptor kind {self.kind!r}")
        if desc.ndim == 1 and n == 0:
            desc = desc.reshape(0, 0)
        if desc.ndim != 2:
            raise UsageError(f"{self.image_id}: descriptors must be a 2-d table")
        set_(self, "descriptors", desc)
        for name in ("orientation", "response"):
            if len(getattr(self, name)) != n:
                raise UsageError(f"{self.image_id}: {name} has wrong length")
        if len(self.descriptors) != n:
            raise UsageError(f"{self.image_id}: |keypoints| != |descriptors|")
        if n and np.any(self.scale <= 0):
            raise UsageError(f"{self.image_id}: keypoint scales must be positive")
        if n and (np.any(self.orientation < -math.pi) or np.any(self.orientation >= math.pi)):
            set_(self, "orientation", _frozen(normalize_angle(self.orientation)))
        if self.affine is not None:
            aff = _frozen(np.reshape(self.affine, (n, 3)), np.float64)
            if n:
                validate_affine(aff)
            set_(self, "affine", aff)
        if self.codes is not None:
            codes = _frozen(self.codes)
            if len(codes) != n:
                raise UsageError(f"{self.image_id}: |codes| != |keypoints|")
            set_(self, "codes", codes)

    def __len__(self) -> int:
        return len(self.scale)

    @property
    def dimension(self) -> int:
        """Real dimension d, or bit length b for binary descriptors."""
        width = self.descriptors.shape[1]
        return width if self.kind == REAL else width * 8

    def keypoint(self, i: int) -> Keypoint:
        aff = None if self.affine is None else tuple(float(v) for v in self.affine[i])
        return Keypoint(
            x=float(self.xy[i, 0]),
            y=float(self.xy[i, 1]),
            scale=float(self.scale[i]),
            orientation=float(self.orientation[i]),
            response=float(self.response[i]),
            affine=aff,
            descriptor_id=i,
        )

    @property
    def keypoints(self) -> list[Keypoint]:
        return [self.keypoint(i) for i in range(len(self))]

    def subset(self, idx, image_id: Optional[str] = None) -> "ImageRecord":
        idx = np.asarray(idx, dtype=np.int64)
        return ImageRecord(
            image_id=image_id or self.image_id,
            xy=self.xy[idx],
            scale=self.scale[idx],
            orientation=self.orientation[idx],
            response=self.response[idx],
            descriptors=self.descriptors[idx],
            kind=self.kind,
            affine=None if self.affine is None else self.affine[idx],
            codes=None if self.codes is None else self.codes[idx],
        )

    def with_codes(self, codes: np.ndarray) -> "ImageRecord":
        return ImageRecord(
            self.image_id, self.xy, self.scale, self.orientation, self.response,
            self.descriptors, self.kind, self.affine, codes,
        )

    def with_descriptors(self, descriptors: np.ndarray) -> "ImageRecord":
        return ImageRecord(
            self.image_id, self.xy, self.scale, self.orientation, self.response,
            descriptors, self.kind, self.affine, None,
        )

    @classmethod
    def from_keypoints(cls, image_id: str, keypoints: list[Keypoint], descriptors, kind: str = REAL) -> "ImageRecord":
        has_affine = any(kp.affine is not None for kp in keypoints)
        if has_affine and not all(kp.affine is not None for kp in keypoints):
            raise UsageError("either all or no keypoints carry an affine shape")
        return cls(
            image_id=image_id,
            xy=np.array([[kp.x, kp.y] for kp in keypoints], dtype=np.float64).reshape(-1, 2),
            scale=np.array([kp.scale for kp in keypoints], dtype=np.float64),
            orientation=np.array([kp.orientation for kp in keypoints], dtype=np.float64),
            response=np.array([kp.response for kp in keypoints], dtype=np.float64),
            descriptors=descriptors,
            kind=kind,
            affine=np.array([kp.affine for kp in keypoints], dtype=np.float64) if has_affine else None,
        )


class Correspondence(NamedTuple):
    """A tentative match between a query keypoint and a database keypoint.

    `distance` is this pair's own descriptor distance. `seed_distance` and
    `seed_knn_distance` are d_ref and d_kNN of the kNN seed the pair descends
    from; expanded pairs inherit them so they score like their seed.
    """

    query_idx: int
    db_image: str
    db_idx: int
    distance: float
    seed_distance: float
    seed_knn_distance: float
    is_seed: bool = True
    depth: int = 0


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise UsageError(f"bounding box must have positive area: {self}")

    def contains(self, xy: np.ndarray) -> np.ndarray:
        return (
            (xy[:, 0] >= self.x1) & (xy[:, 0] <= self.x2)
            & (xy[:, 1] >= self.y1) & (xy[:, 1] <= self.y2)
        )


@dataclass(frozen=True)
class QuerySpec:
    image: ImageRecord
    bounding_box: Optional[BoundingBox] = None
    budget_n: int = 100
    k: int = 100
    query_id: Optional[str] = None

    def __post_init__(self):
        if self.budget_n < 1:
            raise UsageError("budget n must be >= 1")
        if self.k < 1:
            raise UsageError("k must be >= 1")

    @property
    def name(self) -> str:
        return self.query_id or self.image.image_id

    def cropped_image(self) -> ImageRecord:
        """Query image restricted to keypoints inside the bounding box."""
        if self.bounding_box is None:
            return self.image
        keep = np.flatnonzero(self.bounding_box.contains(self.image.xy))
        return self.image.subset(keep)
