"""Query-budgeted retrieval: rank -> top-n kNN -> expansion -> scoring -> WGC."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import BINARY, REAL, Correspondence, ImageRecord, QuerySpec, UsageError
from .dataset_io import GroundTruth
from .expansion import CompressedStore, ExpansionParams, HoodCache, compress_store, expand_recursive
from .mih import MihIndex, build_mih
from .pq import CodebookSet, IvfPqIndex, stack_features
from .storage import load_container
from .ranking import rank
from .scoring import (
    Diagnostics,
    accumulate_scores,
    average_precision,
    burst_filter,
    correspondence_scores,
    mean_average_precision,
    wgc_rerank,
)

DEFAULT_MULTI_ASSIGN = 8


class Engine:
    """Searchable database: kNN index plus compressed store, read-only after build."""

    def __init__(self, database: Sequence[ImageRecord], index, store: CompressedStore,
                 multi_assign: int = DEFAULT_MULTI_ASSIGN):
        self.database = [store.attach(r) for r in database]
        self.by_id = {r.image_id: r for r in self.database}
        self.feature_counts = {r.image_id: len(r) for r in self.database}
        self.index = index
        self.store = store
        self.multi_assign = multi_assign
        self.kind = index.kind
        # database-side expansion neighbourhoods, reused across queries
        self.hood_cache: dict = {}

    @classmethod
    def build(cls, database: Sequence[ImageRecord], codebooks: Optional[CodebookSet] = None,
              num_tables: Optional[int] = None, multi_assign: int = DEFAULT_MULTI_ASSIGN) -> "Engine":
        database = list(database)
        index = build_index(database, codebooks, num_tables)
        store = compress_store(database, codebooks.raw_pq if index.kind == REAL else None)
        return cls(database, index, store, multi_assign)


def build_index(database: Sequence[ImageRecord], codebooks: Optional[CodebookSet] = None,
                num_tables: Optional[int] = None):
    """IVF-PQ for real-valued descriptors, multi-index hashing for binary codes."""
    database = list(database)
    kind = database[0].kind if database else REAL
    if kind == REAL:
        if codebooks is None:
            raise UsageError("real-valued databases need trained codebooks")
        return IvfPqIndex.build(database, codebooks.coarse, codebooks.residual_pq)
    desc, image_of, kp_of, names = stack_features(database)
    return build_mih(desc, num_tables, image_of, kp_of, names)


def load_index(path):
    kind, meta, arr = load_container(path)
    if kind == "ivfpq":
        return IvfPqIndex.from_container(meta, arr)
    if kind == "mih":
        return MihIndex.from_container(meta, arr)
    raise UsageError(f"{path}: container holds {kind!r}, not an index")


@dataclass
class QueryResult:
    query: str
    ranking: list
    timings_ms: dict
    probes: int
    expansion_probes: int
    seeds: int
    expanded: int
    scored: int
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    @property
    def ranked_ids(self) -> list[str]:
        return [i for i, _ in self.ranking]


def knn_seeds(engine: Engine, image: ImageRecord, features: Sequence[int], k: int) -> list:
    """One index probe per feature; seeds carry d_ref and d_kNN.

    Each probe asks for k + 1 neighbours: the first k become seeds and the
    (k+1)-th distance is the reference d_kNN, so the best match of a k=1
    query still gets a positive margin.
    """
    seeds = []
    names = engine.index.image_names
    for f in features:
        res = engine.index.knn_query(image.descriptors[f], k + 1, engine.multi_assign)
        if not len(res):
            continue
        d_knn = float(res.distances[-1])
        take = min(k, len(res))
        for j in range(take):
            d = float(res.distances[j])
            seeds.append(Correspondence(int(f), names[res.images[j]], int(res.keypoints[j]), d, d, d_knn, True, 0))
    return seeds


def run_query(engine: Engine, query: QuerySpec, ranker: str = "anms", ranker_seed: int = 0,
              params: Optional[ExpansionParams] = None, wgc: bool = False) -> QueryResult:
    image = query.cropped_image()
    if image.kind != engine.kind:
        raise UsageError(f"query descriptors are {image.kind} but the index holds {engine.kind}")
    clock = time.perf_counter
    timings = {}

    t0 = clock()
    head = rank(image, ranker, ranker_seed).head(query.budget_n)
    timings["ranking"] = (clock() - t0) * 1e3

    t0 = clock()
    probes_before = engine.index.probes
    seeds = knn_seeds(engine, image, head, query.k)
    probes_after_knn = engine.index.probes
    timings["knn"] = (clock() - t0) * 1e3

    t0 = clock()
    diag = Diagnostics()
    corrs = seeds
    if params is not None and params.max_depth > 0 and len(image):
        qimg = engine.store.attach(image)
        cache = HoodCache(engine.hood_cache)
        corrs = []
        for s in seeds:
            corrs.extend(expand_recursive(s, qimg, engine.by_id[s.db_image], engine.store, params, cache))
    expansion_probes = engine.index.probes - probes_after_knn
    nq = max(len(image), 1)
    scores = correspondence_scores(corrs, nq, engine.feature_counts, diag)
    kept = burst_filter(corrs, scores)
    table = accumulate_scores(kept, nq, engine.feature_counts)
    if wgc:
        ranking = wgc_rerank(kept, table, image, engine.by_id, diag)
    else:
        ranking = table.ranked()
    timings["expansion_scoring"] = (clock() - t0) * 1e3

    return QueryResult(
        query=query.name,
        ranking=ranking,
        timings_ms=timings,
        probes=probes_after_knn - probes_before,
        expansion_probes=expansion_probes,
        seeds=len(seeds),
        expanded=len(corrs) - len(seeds),
        scored=len(kept),
        diagnostics=diag,
    )


@dataclass(frozen=True)
class Cell:
    """One configuration of the evaluation grid."""

    ranker: str
    n: int
    k: int
    expansion: str = "off"   # off | me | mer
    wgc: bool = False

    def params(self, base: Optional[ExpansionParams]) -> Optional[ExpansionParams]:
        if self.expansion == "off":
            return None
        base = base or ExpansionParams()
        return base.with_(max_depth=1 if self.expansion == "me" else 2)

    @property
    def label(self) -> str:
        name = self.ranker.upper()
        if self.expansion != "off":
            name += "+" + self.expansion.upper()
        if self.wgc:
            name += "+WGC"
        return name


@dataclass
class CellResult:
    cell: Cell
    rows: list          # (repeat, query, ap)
    map: float
    median_timings_ms: dict


def evaluate_cell(engine: Engine, queries: Sequence[QuerySpec], gt: GroundTruth, cell: Cell,
                  base_params: Optional[ExpansionParams] = None, repeat: int = 5,
                  seed: int = 0) -> CellResult:
    """Per-query AP for one grid cell; random rankings are averaged over `repeat` runs."""
    params = cell.params(base_params)
    runs = repeat if cell.ranker == "rnd" else 1
    rows, timings = [], []
    for r in range(runs):
        for qi, q in enumerate(queries):
            spec = replace(q, budget_n=cell.n, k=cell.k)
            res = run_query(engine, spec, cell.ranker, seed + 1000 * r + qi, params, cell.wgc)
            truth = gt[q.name]
            ap = average_precision(res.ranked_ids, truth.positive_ids, truth.junk_ids)
            rows.append((r, q.name, ap))
            timings.append(res.timings_ms)
    stages = timings[0].keys() if timings else ()
    med = {s: float(np.median([t[s] for t in timings])) for s in stages}
    return CellResult(cell, rows, mean_average_precision(ap for _, _, ap in rows), med)


def mean_ap(engine: Engine, queries: Sequence[QuerySpec], gt: GroundTruth, ranker: str, n: int, k: int,
            params: Optional[ExpansionParams] = None, wgc: bool = False, repeat: int = 1, seed: int = 0) -> float:
    expansion = "off" if params is None or params.max_depth == 0 else ("me" if params.max_depth == 1 else "mer")
    cell = Cell(ranker, n, k, expansion, wgc)
    return evaluate_cell(engine, queries, gt, cell, params, repeat, seed).map
