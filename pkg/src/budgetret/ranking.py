"""Query keypoint ranking: only the head of the ranking is sent to the index."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ImageRecord, UsageError

C_ROBUST = 0.9
STRATEGIES = ("rnd", "resp", "anms")


@dataclass(frozen=True)
class RankedFeatureList:
    order: np.ndarray
    strategy: str
    rng_seed: Optional[int] = None

    def __len__(self):
        return len(self.order)

    def head(self, n: int) -> np.ndarray:
        return self.order[:n]


def rank_random(image: ImageRecord, seed: int = 0) -> RankedFeatureList:
    order = np.random.default_rng(seed).permutation(len(image))
    return RankedFeatureList(order, "rnd", seed)


def rank_response(image: ImageRecord) -> RankedFeatureList:
    # stable sort on negated response keeps ascending index among ties
    order = np.argsort(-image.response, kind="stable")
    return RankedFeatureList(order, "resp")


def suppression_radii(xy: np.ndarray, response: np.ndarray, c_robust: float = C_ROBUST) -> np.ndarray:
    """Distance from each point to its nearest sufficiently stronger point.

    Point j suppresses point i when c_robust * response[j] > response[i]; the
    radius is +inf when no such j exists.
    """
    n = len(response)
    radii = np.full(n, np.inf)
    if n < 2:
        return radii
    by_resp = np.argsort(-response, kind="stable")
    strong = c_robust * response[by_resp]   # descending
    neg_strong = -strong
    sxy = xy[by_resp]
    for i in range(n):
        # suppressors form a prefix of the response-sorted order
        cut = int(np.searchsorted(neg_strong, -response[i], side="left"))
        if cut == 0:
            continue
        d2 = np.sum((sxy[:cut] - xy[i]) ** 2, axis=1)
        if response[i] < 0:
            d2[by_resp[:cut] == i] = np.inf
        radii[i] = np.sqrt(d2.min())
    return radii


def rank_anms(image: ImageRecord, c_robust: float = C_ROBUST) -> RankedFeatureList:
    """Adaptive non-maximal suppression order (largest suppression radius first)."""
    radii = suppression_radii(image.xy, image.response, c_robust)
    idx = np.arange(len(image))
    # lexsort: last key is primary
    order = np.lexsort((idx, -image.response, -radii))
    return RankedFeatureList(order, "anms")


def rank(image: ImageRecord, strategy: str, seed: int = 0) -> RankedFeatureList:
    if strategy == "rnd":
        return rank_random(image, seed)
    if strategy == "resp":
        return rank_response(image)
    if strategy == "anms":
        return rank_anms(image)
    raise UsageError(f"unknown ranker {strategy!r}; choose from {', '.join(STRATEGIES)}")
