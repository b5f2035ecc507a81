"""Shared fixtures: planted-transform scenes and SIFT-style descriptor samples."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from budgetret.core import ImageRecord
from budgetret.dataset_io import SyntheticConfig, generate_synthetic
from budgetret.expansion import compress_store
from budgetret.pq import train_pq


def sift_like(n: int, rng: np.random.Generator) -> np.ndarray:
    """4x4 cells of 8-bin orientation histograms, unit-normalized, clamped at 0.2, scaled to 512."""
    cell = rng.gamma(2.0, 1.0, (n, 16, 1))
    dom = rng.integers(0, 8, (n, 16, 1))
    b = np.arange(8)[None, None, :]
    circ = np.minimum((b - dom) % 8, (dom - b) % 8)
    prof = np.exp(-circ ** 2 / 2.0) * rng.gamma(1.0, 1.0, (n, 16, 8))
    v = (cell * prof).reshape(n, 128)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v = np.minimum(v, 0.2)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return (512 * v).astype(np.float32)


def planted_scene(seed=0, **overrides):
    """Zero-noise synthetic dataset plus a PQ store covering database and queries."""
    cfg = SyntheticConfig(num_images=20, num_objects=4, positives_per_object=5, noise_sigma=0.0,
                          visible_fraction=(1.0, 1.0), seed=seed)
    cfg = replace(cfg, **overrides)
    ds = generate_synthetic(cfg)
    sample = np.concatenate([r.descriptors for r in ds.database])
    cb = train_pq(sample, iters=4, seed=seed)
    store = compress_store(list(ds.database) + [q.image for q in ds.queries], cb)
    return ds, store


def query_record(ds, plant) -> ImageRecord:
    return ds.queries[plant.object_id].image


def db_record(ds, plant) -> ImageRecord:
    return next(r for r in ds.database if r.image_id == plant.image_id)


def noise_band(bench, num_random: int = 20_000, seed: int = 0):
    """Compressed-distance band separating planted pairs from unrelated ones.

    Lower end: median distance of planted (query, database) keypoint pairs.
    Upper end: 1st percentile of distances between random keypoints of
    different images. Distances are Euclidean between PQ reconstructions.
    """
    store = bench.engine.store
    cb = store.codebooks
    by_id = bench.engine.by_id
    queries = {q.image.image_id: q.image for q in bench.queries}
    planted = []
    for p in bench.dataset.plants:
        q = queries[f"q{p.object_id:03d}"]
        d = by_id[p.image_id]
        a = cb.decode(cb.encode(q.descriptors[p.query_indices]))
        b = cb.decode(store.codes_of(d)[p.db_indices])
        planted.append(np.linalg.norm(a - b, axis=1))
    planted = np.concatenate(planted)
    rng = np.random.default_rng(seed)
    recs = bench.engine.database
    ia, ib = rng.integers(0, len(recs), (2, num_random))
    keep = ia != ib
    ia, ib = ia[keep], ib[keep]
    xa = np.stack([cb.decode(store.codes_of(recs[i])[rng.integers(len(recs[i]))])[0] for i in ia])
    xb = np.stack([cb.decode(store.codes_of(recs[i])[rng.integers(len(recs[i]))])[0] for i in ib])
    random = np.linalg.norm(xa - xb, axis=1)
    return float(np.median(planted)), float(np.percentile(random, 1))
