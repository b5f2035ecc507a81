"""Image scoring from correspondences, WGC re-ranking and AP/MAP."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import Correspondence, ImageRecord, UsageError, angle_difference

log = logging.getLogger(__name__)

WGC_ANGLE_BINS = 32
WGC_SCALE_BINS = 16
# log2 scale-ratio range covered by the scale histogram; outliers land in the edge bins
WGC_LOG_SCALE_RANGE = (-4.0, 4.0)


@dataclass
class Diagnostics:
    clamped_scores: int = 0
    skipped_geometry: int = 0


def score_correspondence(d_knn: float, d_ref: float, nq: int, nx: int,
                         diagnostics: Optional[Diagnostics] = None) -> float:
    """sqrt(d_knn - d_ref) / (sqrt(nq) * sqrt(nx)); negative margins score 0."""
    if nq < 1 or nx < 1:
        raise UsageError("feature counts must be >= 1")
    margin = d_knn - d_ref
    if margin < 0:
        if diagnostics is not None:
            diagnostics.clamped_scores += 1
        margin = 0.0
    return math.sqrt(margin) / (math.sqrt(nq) * math.sqrt(nx))


def correspondence_scores(corrs: Sequence[Correspondence], nq: int, feature_counts: Mapping[str, int],
                          diagnostics: Optional[Diagnostics] = None) -> np.ndarray:
    if not corrs:
        return np.zeros(0)
    knn = np.fromiter((c.seed_knn_distance for c in corrs), float, len(corrs))
    ref = np.fromiter((c.seed_distance for c in corrs), float, len(corrs))
    nx = np.fromiter((feature_counts[c.db_image] for c in corrs), float, len(corrs))
    margin = knn - ref
    neg = margin < 0
    if neg.any():
        if diagnostics is not None:
            diagnostics.clamped_scores += int(neg.sum())
        margin = np.where(neg, 0.0, margin)
    return np.sqrt(margin) / (math.sqrt(nq) * np.sqrt(nx))


def burst_filter(corrs: Sequence[Correspondence], scores: Optional[Sequence[float]] = None,
                 nq: int = 1, feature_counts: Optional[Mapping[str, int]] = None) -> list:
    """Keep the best-scoring correspondence per (query feature, database image).

    Ties go to the lower database keypoint index. Scores are computed from
    the seed distances when not supplied.
    """
    if not corrs:
        return []
    if scores is None:
        counts = feature_counts if feature_counts is not None else _UnitCounts()
        scores = correspondence_scores(corrs, nq, counts)
    best: dict = {}
    for c, s in zip(corrs, scores):
        key = (c.query_idx, c.db_image)
        cur = best.get(key)
        if cur is None or s > cur[1] or (s == cur[1] and c.db_idx < cur[0].db_idx):
            best[key] = (c, s)
    return [v[0] for v in best.values()]


class _UnitCounts(dict):
    def __missing__(self, key):
        return 1


@dataclass
class ScoreTable:
    scores: dict = field(default_factory=dict)
    nq: int = 1
    feature_counts: Mapping[str, int] = field(default_factory=dict)

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.scores.items(), key=lambda kv: (-kv[1], kv[0]))

    def ranked_ids(self) -> list[str]:
        return [i for i, _ in self.ranked()]

    def __len__(self):
        return len(self.scores)


def accumulate_scores(corrs: Sequence[Correspondence], nq: int, feature_counts: Mapping[str, int],
                      diagnostics: Optional[Diagnostics] = None) -> ScoreTable:
    table = ScoreTable(nq=nq, feature_counts=feature_counts)
    vals = correspondence_scores(corrs, nq, feature_counts, diagnostics)
    scores = table.scores
    for c, s in zip(corrs, vals):
        scores[c.db_image] = scores.get(c.db_image, 0.0) + float(s)
    return table


@dataclass
class WgcHistogram:
    angle: np.ndarray
    scale: np.ndarray

    @property
    def mass(self) -> float:
        return float(self.angle.sum())

    def peak_score(self) -> float:
        return float(min(self.angle.max(), self.scale.max())) if self.angle.size else 0.0


def wgc_bins(d_angle: np.ndarray, log2_ratio: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.floor((np.asarray(d_angle) + math.pi) / (2 * math.pi) * WGC_ANGLE_BINS).astype(np.int64)
    a = np.clip(a, 0, WGC_ANGLE_BINS - 1)
    lo, hi = WGC_LOG_SCALE_RANGE
    s = np.floor((np.asarray(log2_ratio) - lo) / (hi - lo) * WGC_SCALE_BINS).astype(np.int64)
    s = np.clip(s, 0, WGC_SCALE_BINS - 1)
    return a, s


def wgc_histograms(corrs: Sequence[Correspondence], scores: np.ndarray, query: ImageRecord,
                   database: Mapping[str, ImageRecord], diagnostics: Optional[Diagnostics] = None) -> dict:
    """Per-image marginal histograms of orientation difference and log2 scale ratio."""
    hists: dict = {}
    if not corrs:
        return hists
    by_image: dict = {}
    for c, s in zip(corrs, scores):
        by_image.setdefault(c.db_image, []).append((c, s))
    for image_id, items in by_image.items():
        rec = database[image_id]
        qi = np.array([c.query_idx for c, _ in items])
        di = np.array([c.db_idx for c, _ in items])
        w = np.array([s for _, s in items], dtype=np.float64)
        d_angle = rec.orientation[di] - query.orientation[qi]
        ratio = rec.scale[di] / query.scale[qi]
        ok = np.isfinite(d_angle) & np.isfinite(ratio) & (ratio > 0)
        if not ok.all():
            n_bad = int((~ok).sum())
            log.warning("WGC: skipping %d correspondences with missing geometry in %s", n_bad, image_id)
            if diagnostics is not None:
                diagnostics.skipped_geometry += n_bad
        a, s = wgc_bins(angle_difference(d_angle[ok], 0.0), np.log2(ratio[ok]))
        hists[image_id] = WgcHistogram(
            np.bincount(a, weights=w[ok], minlength=WGC_ANGLE_BINS),
            np.bincount(s, weights=w[ok], minlength=WGC_SCALE_BINS),
        )
    return hists


def wgc_rerank(corrs: Sequence[Correspondence], score_table: ScoreTable, query: ImageRecord,
               database: Mapping[str, ImageRecord], diagnostics: Optional[Diagnostics] = None) -> list[tuple[str, float]]:
    """Re-score each image by the weaker of its two histogram peaks, descending."""
    scores = correspondence_scores(corrs, score_table.nq, score_table.feature_counts)
    hists = wgc_histograms(corrs, scores, query, database, diagnostics)
    rescored = {i: hists[i].peak_score() if i in hists else 0.0 for i in score_table.scores}
    return sorted(rescored.items(), key=lambda kv: (-kv[1], kv[0]))


def average_precision(ranked_ids: Sequence[str], positives: Iterable[str], junk: Iterable[str] = ()) -> float:
    """AP with junk images removed from the ranking (trapezoidal rule).

    Positives absent from the ranking count as never retrieved.
    """
    pos = set(positives)
    junk = set(junk)
    if not pos:
        raise UsageError("average precision is undefined without positives")
    if len(set(ranked_ids)) != len(ranked_ids):
        raise UsageError("ranking contains duplicate ids")
    old_recall, old_precision, ap = 0.0, 1.0, 0.0
    hits, rank = 0, 0
    for image_id in ranked_ids:
        if image_id in junk:
            continue
        if hits == len(pos):
            break
        if image_id in pos:
            hits += 1
        recall = hits / len(pos)
        precision = hits / (rank + 1.0)
        ap += (recall - old_recall) * (old_precision + precision) / 2.0
        old_recall, old_precision = recall, precision
        rank += 1
    return ap


def mean_average_precision(per_query_ap: Iterable[float]) -> float:
    aps = list(per_query_ap)
    if not aps:
        raise UsageError("MAP needs at least one query")
    return math.fsum(aps) / len(aps)
