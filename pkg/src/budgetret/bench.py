"""Synthetic benchmark assembly shared by the CLI, the tuner and the tests."""
from __future__ import annotations

from dataclasses import replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import REAL, ImageRecord, QuerySpec
from .dataset_io import SyntheticConfig, SyntheticDataset, generate_synthetic, root_weight_descriptor
from .pipeline import Engine
from .pq import CodebookSet, train_codebooks

# codebooks are learnt on a disjoint collection generated with this seed offset
TRAIN_SEED_OFFSET = 10_000


def root_weighted(records: Sequence[ImageRecord]) -> list[ImageRecord]:
    return [r.with_descriptors(root_weight_descriptor(r.descriptors)) if r.kind == REAL else r for r in records]


def root_weighted_queries(queries: Sequence[QuerySpec]) -> list[QuerySpec]:
    return [replace(q, image=root_weighted([q.image])[0]) for q in queries]


def benchmark_codebooks(config: SyntheticConfig, num_images: int = 40, num_cells: int = 64,
                        iters: int = 8, seed: int = 0) -> CodebookSet:
    train = generate_synthetic(replace(config, seed=config.seed + TRAIN_SEED_OFFSET, num_images=num_images,
                                       positives_per_object=min(config.positives_per_object, num_images)))
    sample = np.concatenate([r.descriptors for r in root_weighted(train.database)])
    return train_codebooks(sample, num_cells=num_cells, iters=iters, seed=seed)


class Benchmark(NamedTuple):
    dataset: SyntheticDataset
    engine: Engine
    queries: list

    @property
    def groundtruth(self):
        return self.dataset.groundtruth


def build_benchmark(config: SyntheticConfig, codebooks: Optional[CodebookSet] = None) -> Benchmark:
    """Generate, root-weight and index one synthetic benchmark instance."""
    ds = generate_synthetic(config)
    if config.descriptor_kind == REAL and codebooks is None:
        codebooks = benchmark_codebooks(config)
    engine = Engine.build(root_weighted(ds.database), codebooks)
    return Benchmark(ds, engine, root_weighted_queries(ds.queries))
