"""Command line front end: synth, train-codebooks, build-index, compress-store, query, evaluate, tune."""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import BINARY, REAL, DataError, QuerySpec, UsageError
from .dataset_io import (
    DatasetManifest,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    load_groundtruth,
    load_query_images,
    write_dataset,
    write_groundtruth,
)
from .expansion import CompressedStore, ExpansionParams, compress_store
from .pipeline import Cell, Engine, build_index, evaluate_cell, load_index, run_query
from .pq import CodebookSet, train_codebooks
from .tuning import TuneConfig, check_distinct_manifests, sensitivity, tune_expansion_params

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("budgetret")

RANKERS = ("rnd", "resp", "anms")
EXPANSIONS = ("off", "me", "mer")

# built-in values for options that may also come from --config
DEFAULTS = {
    "ranker": "anms",
    "ranker_seed": 0,
    "n": 100,
    "k": 100,
    "multi_assign": 8,
    "expansion": "off",
    "wgc": False,
    "repeat": 5,
    "top": 0,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    text = path.read_text()
    try:
        doc = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    except ValueError as exc:
        raise DataError(f"{path}: cannot parse config ({exc})") from exc
    return {k.replace("-", "_"): v for k, v in doc.items()}


def _merge_config(args, defaults: dict) -> None:
    """Fill unset options from --config, then from the built-in defaults; flags win."""
    cfg = _load_config(args.config) if getattr(args, "config", None) else {}
    for key, val in cfg.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, val)
    for key, val in defaults.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, val)


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    if isinstance(text, int):
        return [text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _str_list(text, allowed) -> list[str]:
    vals = list(text) if isinstance(text, (list, tuple)) else [v.strip() for v in str(text).split(",") if v.strip()]
    bad = [v for v in vals if v not in allowed]
    if bad:
        raise UsageError(f"unknown value(s) {bad}; choose from {list(allowed)}")
    return vals


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    over = _load_config(args.config) if args.config else {}
    over = dict(over.get("synthetic", over))
    for name in ("seed", "num_images", "noise_sigma", "features_per_image", "num_objects", "descriptor_kind"):
        val = getattr(args, name)
        if val is not None:
            over[name] = val
    known = {f.name for f in fields(SyntheticConfig)}
    unknown = set(over) - known
    if unknown:
        raise UsageError(f"unknown synthetic options: {sorted(unknown)}")
    for key in ("rotation_range", "scale_range", "image_size", "visible_fraction", "object_response"):
        if key in over:
            over[key] = tuple(over[key])
    cfg = SyntheticConfig(**over)
    ds = generate_synthetic(cfg)
    out = Path(args.out)
    manifest = write_dataset(ds.database, out, queries=[q.image for q in ds.queries],
                             square_root_weighting=cfg.descriptor_kind == REAL)
    write_groundtruth(ds.groundtruth, out / "gt")
    log.info("wrote %d images, %d queries to %s", len(ds.database), len(ds.queries), out)
    print(manifest.source)
    return 0


# -- training and building ----------------------------------------------------

def _manifest(path) -> DatasetManifest:
    return DatasetManifest.load(_existing(path, "manifest"))


def cmd_train_codebooks(args) -> int:
    check_distinct_manifests(args.train_manifest, args.eval_manifest)
    manifest = _manifest(args.train_manifest)
    if manifest.descriptor_kind != REAL:
        raise UsageError("codebooks are only needed for real-valued descriptors")
    records = load_dataset(manifest)
    if not records:
        raise DataError(f"{args.train_manifest}: no training images")
    sample = np.concatenate([r.descriptors for r in records])
    cb = train_codebooks(sample, num_cells=args.cells, m=args.m, s=args.s, iters=args.iters,
                         seed=args.seed, max_sample=args.max_sample or None)
    cb.save(args.out)
    log.info("trained %d coarse cells and 2x%d sub-quantizers on %d vectors", args.cells, args.m, len(sample))
    return 0


def _codebooks(path) -> Optional[CodebookSet]:
    return CodebookSet.load(_existing(path, "codebooks")) if path else None


def cmd_build_index(args) -> int:
    manifest = _manifest(args.manifest)
    records = load_dataset(manifest)
    cb = _codebooks(args.codebooks)
    index = build_index(records, cb, args.tables)
    index.save(args.out)
    log.info("indexed %d images", len(records))
    return 0


def cmd_compress_store(args) -> int:
    manifest = _manifest(args.manifest)
    records = load_dataset(manifest)
    cb = _codebooks(args.codebooks)
    if manifest.descriptor_kind == REAL and cb is None:
        raise UsageError("--codebooks is required for real-valued descriptors")
    store = compress_store(records, cb.raw_pq if cb is not None else None)
    store.save(args.out)
    log.info("compressed %d images at %d bytes per descriptor", len(records),
             store.bytes_per_descriptor)
    return 0


# -- query / evaluate ----------------------------------------------------------

def _engine(args):
    manifest = _manifest(args.manifest)
    records = load_dataset(manifest)
    if args.index:
        index = load_index(_existing(args.index, "index"))
        if index.kind != manifest.descriptor_kind:
            raise UsageError(f"index holds {index.kind} descriptors but the manifest lists {manifest.descriptor_kind}")
    else:
        index = build_index(records, _codebooks(args.codebooks))
    if args.store:
        store = CompressedStore.load(_existing(args.store, "store"))
    else:
        cb = _codebooks(args.codebooks)
        store = compress_store(records, cb.raw_pq if cb is not None else None)
    return manifest, Engine(records, index, store, args.multi_assign)


def _queries(manifest: DatasetManifest, gt, engine: Engine, names=None) -> list[QuerySpec]:
    qimages = load_query_images(manifest)
    specs = []
    for truth in gt:
        if names and truth.name not in names:
            continue
        image = qimages.get(truth.query_image_id) or engine.by_id.get(truth.query_image_id)
        if image is None:
            raise DataError(f"query {truth.name}: image {truth.query_image_id} not in the manifest")
        specs.append(QuerySpec(image=image, bounding_box=truth.bounding_box, query_id=truth.name))
    if names:
        missing = set(names) - {s.name for s in specs}
        if missing:
            raise UsageError(f"unknown queries: {sorted(missing)}")
    return specs


def _params(args) -> Optional[ExpansionParams]:
    base = ExpansionParams.load(_existing(args.params, "parameter file")) if args.params else ExpansionParams()
    return base


def _check_budget(n, k):
    if n < 1 or k < 1:
        raise UsageError("n and k must be >= 1")


def cmd_query(args) -> int:
    _merge_config(args, DEFAULTS)
    _check_budget(args.n, args.k)
    if args.ranker not in RANKERS:
        raise UsageError(f"unknown ranker {args.ranker!r}")
    manifest, engine = _engine(args)
    gt = load_groundtruth(_existing(args.gt, "ground truth directory"))
    specs = _queries(manifest, gt, engine, args.query)
    cell = Cell(args.ranker, args.n, args.k, args.expansion, bool(args.wgc))
    params = cell.params(_params(args))
    out = sys.stdout
    for spec in specs:
        spec = replace(spec, budget_n=args.n, k=args.k)
        res = run_query(engine, spec, args.ranker, args.ranker_seed, params, cell.wgc)
        ranking = res.ranking[: args.top] if args.top else res.ranking
        out.write(json.dumps({
            "query": res.query,
            "ranking": [{"image_id": i, "score": s} for i, s in ranking],
            "timings_ms": res.timings_ms,
            "probes": res.probes,
            "expansion_probes": res.expansion_probes,
            "seeds": res.seeds,
            "expanded": res.expanded,
        }) + "\n")
    return 0


def _grid(args) -> list[Cell]:
    rankers = _str_list(args.ranker, RANKERS)
    expansions = _str_list(args.expansion, EXPANSIONS)
    ns, ks = _int_list(args.n), _int_list(args.k)
    for v in ns + ks:
        if v < 1:
            raise UsageError("n and k must be >= 1")
    return [Cell(r, n, k, e, bool(args.wgc)) for r, n, k, e in itertools.product(rankers, ns, ks, expansions)]


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if path:
        Path(path).write_text(buf.getvalue())
    return buf.getvalue()


def format_table(results) -> str:
    head = f"{'cell':<18}{'n':>6}{'k':>6}{'MAP':>9}{'rank ms':>10}{'kNN ms':>10}{'exp+score ms':>14}"
    lines = [head, "-" * len(head)]
    for r in results:
        t = r.median_timings_ms
        lines.append(f"{r.cell.label:<18}{r.cell.n:>6}{r.cell.k:>6}{r.map:>9.4f}"
                     f"{t.get('ranking', 0):>10.2f}{t.get('knn', 0):>10.2f}{t.get('expansion_scoring', 0):>14.2f}")
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    _merge_config(args, DEFAULTS)
    manifest, engine = _engine(args)
    gt = load_groundtruth(_existing(args.gt, "ground truth directory"))
    specs = _queries(manifest, gt, engine, args.query)
    if not specs:
        raise UsageError("no queries to evaluate")
    params = _params(args)
    results = [evaluate_cell(engine, specs, gt, cell, params, args.repeat, args.ranker_seed) for cell in _grid(args)]
    ap_rows, map_rows = [], []
    for r in results:
        c = r.cell
        for rep, q, ap in r.rows:
            ap_rows.append([c.label, c.ranker, c.n, c.k, c.expansion, int(c.wgc), rep, q, repr(float(ap))])
        map_rows.append([c.label, c.ranker, c.n, c.k, c.expansion, int(c.wgc), repr(float(r.map))])
    cols = ["cell", "ranker", "n", "k", "expansion", "wgc"]
    _write_csv(args.ap_csv, cols + ["repeat", "query", "ap"], ap_rows)
    text = _write_csv(args.map_csv, cols + ["map"], map_rows)
    if not args.map_csv:
        sys.stdout.write(text)
    print(format_table(results), file=sys.stderr if not args.map_csv else sys.stdout)
    return 0


# -- tune ----------------------------------------------------------------------

def cmd_tune(args) -> int:
    check_distinct_manifests(args.train_manifest, args.eval_manifest)
    config = TuneConfig.load(_existing(args.tune_config, "tuning config")) if args.tune_config else TuneConfig()
    manifest = _manifest(args.train_manifest)
    records = load_dataset(manifest)
    cb = _codebooks(args.codebooks)
    engine = Engine.build(records, cb, multi_assign=args.multi_assign or 8)
    gt = load_groundtruth(_existing(args.train_gt, "ground truth directory"))
    specs = _queries(manifest, gt, engine)
    result = tune_expansion_params(engine, specs, gt, config, args.train_manifest, args.eval_manifest)
    result.params.save(args.out)
    print(f"training MAP {result.initial_map:.4f} -> {result.tuned_map:.4f} after {result.evaluations} evaluations")
    print(json.dumps(result.params.to_dict()))
    if args.sensitivity:
        base, rows = sensitivity(engine, specs, gt, result.params, config)
        print(f"{'parameter':<14}{'factor':>8}{'value':>10}{'MAP':>9}{'delta':>9}")
        for row in rows:
            print(f"{row.parameter:<14}{row.factor:>8.2f}{row.value:>10.3f}{row.map:>9.4f}{row.delta:>+9.4f}")
        print(f"max |dMAP| = {max(abs(r.delta) for r in rows):.4f}")
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="budgetret", description="Query-budgeted object retrieval with match expansion.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic benchmark (features, manifest, ground truth)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--config", help="JSON/TOML file with generator options")
    s.add_argument("--seed", type=int, help="generator seed")
    s.add_argument("--num-images", type=int, help="database size")
    s.add_argument("--num-objects", type=int, help="number of planted objects (= queries)")
    s.add_argument("--features-per-image", type=int, help="keypoints per database image")
    s.add_argument("--noise-sigma", type=float, help="descriptor noise of planted copies")
    s.add_argument("--descriptor-kind", choices=(REAL, BINARY), help="real or binary descriptors")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-codebooks", help="learn coarse and PQ codebooks on a training collection")
    s.add_argument("--train-manifest", required=True, help="manifest of the training collection")
    s.add_argument("--eval-manifest", help="evaluation manifest; refused if it is the training one")
    s.add_argument("--out", required=True, help="output codebook file")
    s.add_argument("--cells", type=int, default=2048, help="coarse cells V (default 2048)")
    s.add_argument("--m", type=int, default=8, help="sub-quantizers (default 8)")
    s.add_argument("--s", type=int, default=256, help="centroids per sub-quantizer (default 256)")
    s.add_argument("--iters", type=int, default=20, help="Lloyd iterations (default 20)")
    s.add_argument("--max-sample", type=int, default=200_000, help="subsample size, 0 for all (default 200000)")
    s.add_argument("--seed", type=int, default=0, help="k-means seed")
    s.set_defaults(func=cmd_train_codebooks)

    s = sub.add_parser("build-index", help="build the kNN index (IVF-PQ or multi-index hashing)")
    s.add_argument("--manifest", required=True, help="database manifest")
    s.add_argument("--codebooks", help="codebook file (real-valued descriptors)")
    s.add_argument("--tables", type=int, help="hash tables for binary codes (default from data size)")
    s.add_argument("--out", required=True, help="output index file")
    s.set_defaults(func=cmd_build_index)

    s = sub.add_parser("compress-store", help="write the compressed descriptor store used by expansion")
    s.add_argument("--manifest", required=True, help="database manifest")
    s.add_argument("--codebooks", help="codebook file (real-valued descriptors)")
    s.add_argument("--out", required=True, help="output store file")
    s.set_defaults(func=cmd_compress_store)

    for name, func, helptext in (("query", cmd_query, "rank database images for queries (JSON lines)"),
                                 ("evaluate", cmd_evaluate, "MAP over a grid of rankers, n, k and expansion")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", help="JSON/TOML file with option values; flags win")
        s.add_argument("--manifest", required=True, help="database manifest")
        s.add_argument("--gt", required=True, help="ground truth directory")
        s.add_argument("--index", help="index file (built in memory when absent)")
        s.add_argument("--store", help="compressed store file (built in memory when absent)")
        s.add_argument("--codebooks", help="codebook file, needed when index or store is built in memory")
        s.add_argument("--params", help="expansion parameter file (JSON/TOML)")
        s.add_argument("--query", action="append", help="restrict to this query name (repeatable)")
        s.add_argument("--ranker-seed", type=int, help="seed of the random ranker (default 0)")
        s.add_argument("--multi-assign", type=int, help="coarse cells visited per probe (default 8)")
        s.add_argument("--wgc", action="store_true", default=None, help="re-rank with weak geometric consistency")
        if name == "query":
            s.add_argument("--ranker", help="rnd, resp or anms (default anms)")
            s.add_argument("--n", type=int, help="kNN query budget (default 100)")
            s.add_argument("--k", type=int, help="neighbours per query (default 100)")
            s.add_argument("--expansion", choices=EXPANSIONS, help="off, me or mer (default off)")
            s.add_argument("--top", type=int, help="print only the first N images (default all)")
        else:
            s.add_argument("--ranker", help="comma list of rankers (default anms)")
            s.add_argument("--n", help="comma list of budgets (default 100)")
            s.add_argument("--k", help="comma list of k values (default 100)")
            s.add_argument("--expansion", help="comma list from off, me, mer (default off)")
            s.add_argument("--repeat", type=int, help="runs averaged for the random ranker (default 5)")
            s.add_argument("--ap-csv", help="per-query AP CSV output")
            s.add_argument("--map-csv", help="MAP CSV output (stdout when absent)")
        s.set_defaults(func=func)

    s = sub.add_parser("tune", help="Nelder-Mead search of expansion thresholds on a training set")
    s.add_argument("--tune-config", help="TuneConfig file (JSON/TOML)")
    s.add_argument("--train-manifest", required=True, help="training manifest")
    s.add_argument("--train-gt", required=True, help="training ground truth directory")
    s.add_argument("--eval-manifest", help="evaluation manifest; refused if it is the training one")
    s.add_argument("--codebooks", help="codebook file (real-valued descriptors)")
    s.add_argument("--multi-assign", type=int, help="coarse cells visited per probe (default 8)")
    s.add_argument("--out", required=True, help="output parameter file")
    s.add_argument("--sensitivity", action="store_true", help="report MAP with each threshold moved by 10%%")
    s.set_defaults(func=cmd_tune)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
