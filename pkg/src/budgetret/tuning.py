"""Expansion threshold selection by Nelder-Mead simplex search on MAP."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import UsageError
from .dataset_io import GroundTruth, manifest_identity
from .expansion import ExpansionParams
from .pipeline import Engine, mean_ap

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

REFLECT, EXPAND, CONTRACT, SHRINK = 1.0, 2.0, 0.5, 0.5
MAX_ANGLE_DEG = 90.0


class _BudgetExhausted(Exception):
    pass


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    evaluations: int
    iterations: int
    converged: bool

    def __iter__(self):
        yield self.x
        yield self.fun


def _initial_steps(x0: np.ndarray, step) -> np.ndarray:
    if step is None:
        return np.where(x0 != 0, 0.05 * x0, 0.00025)
    s = np.broadcast_to(np.asarray(step, dtype=np.float64), x0.shape).copy()
    if np.any(s == 0):
        raise UsageError("simplex steps must be non-zero")
    return s


def nelder_mead(objective: Callable[[np.ndarray], float], x0, step=None, tol: float = 1e-8,
                max_eval: int = 1000) -> NelderMeadResult:
    """Minimize `objective` with the downhill simplex method.

    The initial simplex is x0 plus x0 + step[i] * e_i. Iteration stops when
    the spread of function values over the simplex drops below `tol` or the
    evaluation budget is spent; the best point ever evaluated is returned.
    """
    if not tol > 0:
        raise UsageError("tolerance must be positive")
    if max_eval < 1:
        raise UsageError("max_eval must be at least 1")
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64)).copy()
    steps = _initial_steps(x0, step)
    dim = len(x0)

    best = {"x": x0.copy(), "f": math.inf}
    count = [0]

    def f(x):
        if count[0] >= max_eval:
            raise _BudgetExhausted
        count[0] += 1
        val = float(objective(x.copy()))
        if math.isnan(val):
            val = math.inf
        if val < best["f"]:
            best["x"], best["f"] = x.copy(), val
        return val

    f0 = float(objective(x0.copy()))
    count[0] = 1
    if not math.isfinite(f0):
        raise UsageError(f"objective is not finite at the starting point ({f0})")
    best["f"] = f0

    simplex = [x0]
    values = [f0]
    iterations = 0
    converged = False
    try:
        for i in range(dim):
            v = x0.copy()
            v[i] += steps[i]
            simplex.append(v)
            values.append(f(v))
        while True:
            order = np.argsort(values, kind="stable")
            simplex = [simplex[j] for j in order]
            values = [values[j] for j in order]
            if values[-1] - values[0] < tol:
                converged = True
                break
            if count[0] >= max_eval:
                break
            iterations += 1
            centroid = np.mean(simplex[:-1], axis=0)
            worst = simplex[-1]
            xr = centroid + REFLECT * (centroid - worst)
            fr = f(xr)
            if values[0] <= fr < values[-2]:
                simplex[-1], values[-1] = xr, fr
                continue
            if fr < values[0]:
                xe = centroid + EXPAND * (xr - centroid)
                fe = f(xe)
                if fe < fr:
                    simplex[-1], values[-1] = xe, fe
                else:
                    simplex[-1], values[-1] = xr, fr
                continue
            if fr < values[-1]:
                xc = centroid + CONTRACT * (xr - centroid)
                fc = f(xc)
                if fc <= fr:
                    simplex[-1], values[-1] = xc, fc
                    continue
            else:
                xc = centroid + CONTRACT * (worst - centroid)
                fc = f(xc)
                if fc < values[-1]:
                    simplex[-1], values[-1] = xc, fc
                    continue
            for j in range(1, len(simplex)):
                simplex[j] = simplex[0] + SHRINK * (simplex[j] - simplex[0])
                values[j] = f(simplex[j])
    except _BudgetExhausted:
        pass
    return NelderMeadResult(best["x"], best["f"], count[0], iterations, converged)


# -- expansion parameter tuning ------------------------------------------------

@dataclass(frozen=True)
class TuneConfig:
    """Fixed pipeline settings plus the start point and simplex of the free thresholds."""

    delta_xy: float = 6.0
    delta_s: float = 0.8
    k: int = 100
    n: int = 10
    max_depth: int = 2
    initial_delta_dv: float = 26.2
    initial_delta_alpha: float = 24.3
    initial_delta_r: Optional[float] = None
    initial_delta_dxy: float = 0.49
    step: Optional[tuple] = None
    tol: float = 1e-4
    max_eval: int = 60
    ranker_seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise UsageError("tolerance must be positive")
        if self.n < 1 or self.k < 1:
            raise UsageError("n and k must be >= 1")
        if self.max_eval < 1:
            raise UsageError("max_eval must be >= 1")
        if self.step is not None and len(self.step) != self.dimension:
            raise UsageError(f"step needs {self.dimension} entries")

    @property
    def uses_gradient(self) -> bool:
        return self.initial_delta_r is not None

    @property
    def dimension(self) -> int:
        return 4 if self.uses_gradient else 3

    @property
    def names(self) -> list[str]:
        if self.uses_gradient:
            return ["delta_dv", "delta_alpha", "delta_r", "delta_dxy"]
        return ["delta_dv", "delta_alpha", "delta_dxy"]

    def x0(self) -> np.ndarray:
        vals = {"delta_dv": self.initial_delta_dv, "delta_alpha": self.initial_delta_alpha,
                "delta_r": self.initial_delta_r, "delta_dxy": self.initial_delta_dxy}
        return np.array([vals[n] for n in self.names], dtype=np.float64)

    def steps(self) -> np.ndarray:
        if self.step is not None:
            return np.asarray(self.step, dtype=np.float64)
        # a quarter of each start value: MAP is piecewise constant, tiny simplices stall
        return 0.25 * self.x0()

    def upper_bounds(self) -> np.ndarray:
        ub = {"delta_dv": 4.0 * self.initial_delta_dv, "delta_alpha": MAX_ANGLE_DEG,
              "delta_r": MAX_ANGLE_DEG, "delta_dxy": 1.0}
        return np.array([ub[n] for n in self.names])

    def in_box(self, x: np.ndarray) -> bool:
        return bool(np.all(x > 0) and np.all(x <= self.upper_bounds()))

    def params(self, x: np.ndarray) -> ExpansionParams:
        free = dict(zip(self.names, (float(v) for v in x)))
        return ExpansionParams(delta_xy=self.delta_xy, delta_s=self.delta_s, max_depth=self.max_depth,
                               delta_r=free.get("delta_r"), delta_dv=free["delta_dv"],
                               delta_alpha=free["delta_alpha"], delta_dxy=free["delta_dxy"])

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["step"] is not None:
            d["step"] = list(d["step"])
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TuneConfig":
        doc = dict(doc.get("tune", doc))
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown tuning options: {sorted(unknown)}")
        if doc.get("initial_delta_r") == "--":
            doc["initial_delta_r"] = None
        if doc.get("step") is not None:
            doc["step"] = tuple(float(v) for v in doc["step"])
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "TuneConfig":
        path = Path(path)
        text = path.read_text()
        doc = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        return cls.from_dict(doc)


@dataclass
class TuneResult:
    params: ExpansionParams
    initial_map: float
    tuned_map: float
    evaluations: int
    trace: list = field(default_factory=list)   # (x, map) per distinct evaluation


def check_distinct_manifests(train_manifest, eval_manifest) -> None:
    if train_manifest is None or eval_manifest is None:
        return
    if manifest_identity(train_manifest) == manifest_identity(eval_manifest):
        raise UsageError(
            "training and evaluation manifests are the same file; tune on a separate "
            "training collection and evaluate the tuned thresholds elsewhere"
        )


class MapObjective:
    """-MAP of the ANMS + expansion pipeline, cached on rounded coordinates."""

    def __init__(self, engine: Engine, queries: Sequence, groundtruth: GroundTruth, config: TuneConfig):
        self.engine = engine
        self.queries = list(queries)
        self.groundtruth = groundtruth
        self.config = config
        self.cache: dict = {}
        self.trace: list = []

    def map_of(self, params: ExpansionParams) -> float:
        cfg = self.config
        return mean_ap(self.engine, self.queries, self.groundtruth, "anms", cfg.n, cfg.k, params,
                       seed=cfg.ranker_seed)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if not self.config.in_box(x):
            return math.inf
        key = tuple(np.round(x, 6))
        if key not in self.cache:
            m = self.map_of(self.config.params(x))
            self.cache[key] = -m
            self.trace.append((x.copy(), m))
        return self.cache[key]


def tune_expansion_params(engine: Engine, queries: Sequence, groundtruth: GroundTruth, config: TuneConfig,
                          train_manifest=None, eval_manifest=None) -> TuneResult:
    """Maximize training MAP over the free expansion thresholds."""
    check_distinct_manifests(train_manifest, eval_manifest)
    if config.max_depth < 1:
        raise UsageError("tuning needs expansion enabled (max_depth >= 1)")
    obj = MapObjective(engine, queries, groundtruth, config)
    x0 = config.x0()
    if not config.in_box(x0):
        raise UsageError("initial thresholds lie outside the search box")
    res = nelder_mead(obj, x0, config.steps(), config.tol, config.max_eval)
    initial = -obj(x0)
    return TuneResult(config.params(res.x), initial, -res.fun, res.evaluations, obj.trace)


@dataclass
class SensitivityRow:
    parameter: str
    factor: float
    value: float
    map: float
    delta: float


def sensitivity(engine: Engine, queries: Sequence, groundtruth: GroundTruth, params: ExpansionParams,
                config: TuneConfig, rel: float = 0.1) -> tuple[float, list]:
    """MAP at `params` and with each free threshold moved by -rel and +rel."""
    obj = MapObjective(engine, queries, groundtruth, config)
    base = obj.map_of(params)
    rows = []
    names = [n for n in ("delta_dv", "delta_alpha", "delta_r", "delta_dxy") if getattr(params, n) is not None]
    for name in names:
        for factor in (1.0 - rel, 1.0 + rel):
            value = getattr(params, name) * factor
            if name == "delta_dxy":
                value = min(value, 1.0)
            m = obj.map_of(params.with_(**{name: value}))
            rows.append(SensitivityRow(name, factor, value, m, m - base))
    return base, rows
