"""Experiment grid: model x epsilon x split seed x generation seed.

Every cell draws its randomness from a stream keyed on the cell identity,
so reports do not depend on worker count or completion order. Wall-clock
timings go to a separate file to keep ``report.json`` and ``report.csv``
byte-reproducible.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .attack import blackbox_attack
from .dataset import (
    DeShift,
    LabeledTable,
    PlantedModule,
    PlantedSpec,
    Standardizer,
    generate_planted,
    load_csv,
    scaled_class_counts,
    split,
)
from .exceptions import ConfigError, DpsynthError
from .generators import GENERATORS
from .metrics import (
    build_network,
    compare_networks,
    de_genes,
    de_tpr_fpr,
    detect_modules,
    group_fold_changes,
    knn_distance_score,
    overlap_score,
    train_eval,
)
from .rng import rng_stream

logger = logging.getLogger(__name__)

DEFAULT_EPSILONS = (5.0, 10.0, 20.0, 50.0, 100.0, math.inf)
# class sizes of the leukemia cohort the benchmark mimics
REFERENCE_CLASS_COUNTS = (508, 12, 14, 13, 634)
BUDGET_RTOL = 1e-12


class BudgetExceeded(DpsynthError, AssertionError):
    pass


def default_planted_spec(n: int = 1200, d: int = 50) -> PlantedSpec:
    """Five classes at the reference ratios, 10 DE genes, 3 modules of 15."""
    counts = scaled_class_counts(n, REFERENCE_CLASS_COUNTS)
    de = tuple(DeShift(j, j % 5, 5.0 if j < 5 else -5.0) for j in range(min(10, d)))
    mods = []
    start = 5
    for m in range(3):
        genes = tuple(range(start, start + 15))
        if genes[-1] >= d:
            break
        mods.append(PlantedModule(genes, 0.9, {m % len(counts): 1.5}))
        start += 15
    return PlantedSpec(tuple(counts), d, de, tuple(mods))


def format_eps(eps: float) -> str:
    return "inf" if math.isinf(eps) else repr(float(eps))


def parse_eps(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity"):
            return math.inf
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(f"epsilon {value!r} is not a number or 'inf'") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"epsilon {value!r} is not a number or 'inf'")
    value = float(value)
    if not value > 0:
        raise ConfigError(f"epsilon must be positive, got {value}")
    return value


@dataclass
class MetricOptions:
    knn_k: int = 10
    bin_counts: tuple = (25, 50, 100)
    r_mins: tuple = (0.0, 0.7)
    module_r_min: float = 0.7
    min_module_size: int = 10
    alpha: float = 0.05


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: {"planted": "default", "seed": 0})
    models: tuple = tuple(GENERATORS)
    epsilons: tuple = DEFAULT_EPSILONS
    delta: float = 1e-5
    split_seeds: tuple = (0, 1)
    gen_seeds: tuple = (0, 1)
    master_seed: int = 0
    test_fraction: float = 0.2
    n_synth: Optional[int] = None
    model_params: dict = field(default_factory=dict)
    metrics: MetricOptions = field(default_factory=MetricOptions)
    out: str = "results"

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(cfg) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(cfg)
        if "epsilons" in kw:
            kw["epsilons"] = tuple(parse_eps(e) for e in kw["epsilons"])
        for key in ("models", "split_seeds", "gen_seeds"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "metrics" in kw:
            m = dict(kw["metrics"])
            bad = set(m) - set(MetricOptions.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown metric options: {sorted(bad)}")
            for key in ("bin_counts", "r_mins"):
                if key in m:
                    m[key] = tuple(m[key])
            kw["metrics"] = MetricOptions(**m)
        out = cls(**kw)
        out.validate()
        return out

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def validate(self) -> None:
        if not self.models:
            raise ConfigError("no models requested")
        for m in self.models:
            if m not in GENERATORS:
                raise ConfigError(f"unknown model {m!r}; choose from {sorted(GENERATORS)}")
        if not self.epsilons:
            raise ConfigError("no epsilon values")
        for e in self.epsilons:
            parse_eps(e)
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        for key in ("split_seeds", "gen_seeds"):
            seeds = getattr(self, key)
            if not seeds or len(set(seeds)) != len(seeds):
                raise ConfigError(f"{key} must be a non-empty list of distinct seeds")
            if any(not isinstance(s, int) or isinstance(s, bool) for s in seeds):
                raise ConfigError(f"{key} must be integers")
        if not 0 < self.test_fraction < 0.5:
            raise ConfigError("test_fraction must lie in (0, 0.5)")
        for m, params in self.model_params.items():
            if m not in GENERATORS:
                raise ConfigError(f"model_params for unknown model {m!r}")
            valid = set(GENERATORS[m]().get_params())
            bad = set(params) - valid
            if bad:
                raise ConfigError(f"invalid {m} parameters: {sorted(bad)}")
            if {"epsilon", "delta", "random_state", "n_classes"} & set(params):
                raise ConfigError("epsilon, delta, n_classes and random_state are set by the grid")
        if not ("csv" in self.data) ^ ("planted" in self.data):
            raise ConfigError("data must specify exactly one of 'csv' or 'planted'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epsilons"] = [format_eps(e) for e in self.epsilons]
        return _jsonable(d)

    def cells(self) -> List["Cell"]:
        return [
            Cell(m, float(e), s, g)
            for m in self.models
            for e in self.epsilons
            for s in self.split_seeds
            for g in self.gen_seeds
        ]


@dataclass(frozen=True)
class Cell:
    model: str
    epsilon: float
    split_seed: int
    gen_seed: int

    @property
    def task_id(self) -> str:
        # the stream of a cell depends on its model and seeds only
        return f"{self.model}|eps={format_eps(self.epsilon)}|split={self.split_seed}|gen={self.gen_seed}"

    def key(self) -> dict:
        return {"model": self.model, "epsilon": format_eps(self.epsilon), "split_seed": self.split_seed, "gen_seed": self.gen_seed}


def load_data(config: ExperimentConfig) -> LabeledTable:
    src = config.data
    if "csv" in src:
        return load_csv(src["csv"], src.get("label_col", "label"))
    spec = src["planted"]
    if spec == "default":
        spec = default_planted_spec(int(src.get("n", 1200)), int(src.get("d", 50)))
    elif isinstance(spec, dict):
        spec = PlantedSpec.from_dict(spec)
    else:
        raise ConfigError("data.planted must be 'default' or a planted spec object")
    table, _ = generate_planted(spec, int(src.get("seed", 0)))
    return table


# -- metrics ---------------------------------------------------------------

def evaluate(train: LabeledTable, test: LabeledTable, synth: LabeledTable, opts: MetricOptions = MetricOptions()):
    """All synthetic-data metrics for one released table.

    Returns ``(values, skipped)``: metric name to value, and metric name to
    the reason it could not be computed.
    """
    values: Dict[str, float] = {}
    skipped: Dict[str, str] = {}

    def attempt(names, fn):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                values.update(fn())
        except (DpsynthError, ValueError, FloatingPointError) as exc:
            for name in names:
                skipped[name] = f"{type(exc).__name__}: {exc}"

    attempt(["accuracy"], lambda: {"accuracy": train_eval(synth, test)})

    def overlap():
        s = overlap_score(train, synth, opts.bin_counts)
        return {f"overlap_{b}": s[int(b)] for b in opts.bin_counts} | {"overlap_mean": s["mean"]}

    attempt([f"overlap_{b}" for b in opts.bin_counts] + ["overlap_mean"], overlap)

    def knn():
        sc = Standardizer().fit(train.features)
        S = sc.transform(synth.features)
        k_test = min(opts.knn_k, test.n)
        return {
            "knn_test": knn_distance_score(S, sc.transform(test.features), k_test),
            "knn_train": knn_distance_score(S, sc.transform(train.features), min(opts.knn_k, train.n)),
        }

    attempt(["knn_test", "knn_train"], knn)

    def de():
        tpr, fpr = de_tpr_fpr(
            de_genes(train, opts.alpha, train.n_classes),
            de_genes(synth, opts.alpha, train.n_classes),
        )
        return {"de_tpr": tpr, "de_fpr": fpr}

    attempt(["de_tpr", "de_fpr"], de)

    for r in opts.r_mins:
        tag = f"r{r:g}"
        names = [f"coexp_correct_{tag}", f"coexp_spurious_{tag}", f"coexp_real_{tag}"]

        def coexp(r=r, names=names):
            c, s, e = compare_networks(build_network(train, r, opts.alpha), build_network(synth, r, opts.alpha))
            return dict(zip(names, (float(c), float(s), float(e))))

        attempt(names, coexp)

    def gfc():
        mods = detect_modules(build_network(train, opts.module_r_min, opts.alpha), opts.min_module_size)
        if not mods:
            raise ValueError("no module reaches the minimum size")
        ms = group_fold_changes(mods, train, synth)
        if math.isnan(ms.adjacency):
            raise ValueError("no synthetic group to compare")
        return {"gfc_adjacency": ms.adjacency, "n_modules": float(len(mods))}

    attempt(["gfc_adjacency", "n_modules"], gfc)
    attempt(["mia_auc"], lambda: {"mia_auc": blackbox_attack(synth, train, test).auc})

    for name, v in list(values.items()):
        if not math.isfinite(v):
            del values[name]
            skipped[name] = "non-finite value"
    return values, skipped


# -- grid execution --------------------------------------------------------

def accountant_trace(gen) -> dict:
    out = {"epsilon_spent": gen.epsilon_spent_}
    for attr in ("noise_multiplier_", "mean_noise_sigma_", "cov_noise_sigma_", "measurement_epsilon_"):
        if hasattr(gen, attr):
            out[attr.rstrip("_")] = getattr(gen, attr)
    if hasattr(gen, "measurement_epsilons_"):
        out["measurement_epsilons"] = list(gen.measurement_epsilons_)
    acc = getattr(gen, "accountant_", None)
    if acc is not None and getattr(acc, "steps", 0):
        out["rdp"] = acc.to_dict()
    return _jsonable(out)


def check_budget(spent: float, target: float) -> None:
    if math.isinf(target):
        return
    if not spent <= target * (1 + BUDGET_RTOL):
        raise BudgetExceeded(f"consumed epsilon {spent} exceeds configured {target}")


def run_cell(config: ExperimentConfig, table: LabeledTable, cell: Cell) -> dict:
    """Fit, sample and evaluate one grid cell; never raises on model failure."""
    timings = {}
    record = cell.key()
    t0 = time.perf_counter()
    try:
        parts = split(table, config.test_fraction, cell.split_seed)
        train, test = parts.train, parts.test
        fit_rng = rng_stream(config.master_seed, cell.task_id + "/fit")
        sample_rng = rng_stream(config.master_seed, cell.task_id + "/sample")
        params = dict(config.model_params.get(cell.model, {}))
        gen = GENERATORS[cell.model](
            epsilon=cell.epsilon, delta=config.delta, n_classes=table.n_classes, random_state=fit_rng, **params
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gen.fit_table(train)
            timings["fit"] = time.perf_counter() - t0
            check_budget(gen.epsilon_spent_, cell.epsilon)
            n_synth = config.n_synth or train.n
            synth = gen.sample_table(n_synth, random_state=sample_rng, like=train)
        if not np.all(np.isfinite(synth.features)):
            raise FloatingPointError("generator produced non-finite values")
        t1 = time.perf_counter()
        values, skipped = evaluate(train, test, synth, config.metrics)
        timings["evaluate"] = time.perf_counter() - t1
        record.update(
            status="ok",
            epsilon_spent=_jsonable(gen.epsilon_spent_),
            metrics={k: values[k] for k in sorted(values)},
            skipped={k: skipped[k] for k in sorted(skipped)},
        )
        record["_trace"] = accountant_trace(gen)
    except Exception as exc:  # a failing cell must not stop the grid
        logger.error("cell %s failed: %s", cell.task_id, exc)
        logger.debug("%s", traceback.format_exc())
        record.update(status="failed", error=f"{type(exc).__name__}: {exc}", metrics={}, skipped={})
    timings["total"] = time.perf_counter() - t0
    record["_timings"] = timings
    return record


def _init_worker():
    # one BLAS thread per worker process, otherwise workers oversubscribe cores
    threadpool_limits(1)


def _cell_job(args):
    config, table, cell = args
    return run_cell(config, table, cell)


def run_grid(config: ExperimentConfig, threads: int = 1, table: Optional[LabeledTable] = None) -> List[dict]:
    table = table if table is not None else load_data(config)
    cells = config.cells()
    if threads <= 1:
        with threadpool_limits(1):
            return [run_cell(config, table, c) for c in cells]
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker) as pool:
        # map preserves submission order, so the reduce is order-stable
        return list(pool.map(_cell_job, [(config, table, c) for c in cells]))


def aggregate(records: Sequence[dict]) -> List[dict]:
    """Mean and population std over generation seeds per (model, epsilon, split seed)."""
    groups: Dict[tuple, List[dict]] = {}
    for r in records:
        groups.setdefault((r["model"], r["epsilon"], r["split_seed"]), []).append(r)
    out = []
    for (model, eps, s), recs in groups.items():
        ok = [r for r in recs if r["status"] == "ok"]
        names = sorted({k for r in ok for k in r["metrics"]})
        stats = {}
        for name in names:
            vals = np.array([r["metrics"][name] for r in ok if name in r["metrics"]])
            stats[name] = {"mean": float(vals.mean()), "std": float(vals.std()), "n": int(vals.size)}
        out.append({"model": model, "epsilon": eps, "split_seed": s, "n_ok": len(ok), "n_cells": len(recs), "metrics": stats})
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def report_csv(records: Sequence[dict], aggregates: Sequence[dict]) -> str:
    """One row per cell per metric, then mean/std rows per seed group."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "epsilon", "split_seed", "gen_seed", "status", "metric", "value"])
    for r in records:
        if r["status"] != "ok":
            w.writerow([r["model"], r["epsilon"], r["split_seed"], r["gen_seed"], "failed", "", ""])
            continue
        for name, v in r["metrics"].items():
            w.writerow([r["model"], r["epsilon"], r["split_seed"], r["gen_seed"], "ok", name, repr(v)])
        for name in r["skipped"]:
            w.writerow([r["model"], r["epsilon"], r["split_seed"], r["gen_seed"], "skipped", name, ""])
    for a in aggregates:
        for name, st in a["metrics"].items():
            for stat in ("mean", "std"):
                w.writerow([a["model"], a["epsilon"], a["split_seed"], stat, "aggregate", name, repr(st[stat])])
    return buf.getvalue()


def write_reports(out_dir, config: ExperimentConfig, records: Sequence[dict], trace_path=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clean = [{k: v for k, v in r.items() if not k.startswith("_")} for r in records]
    aggs = aggregate(clean)
    report = {"config": config.to_dict(), "cells": clean, "aggregates": aggs}
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True, allow_nan=False) + "\n")
    (out / "report.csv").write_text(report_csv(clean, aggs))
    timings = [{**_cell_key(r), **r.get("_timings", {})} for r in records]
    (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")
    if trace_path is not None:
        trace = [{**_cell_key(r), **r.get("_trace", {})} for r in records]
        Path(trace_path).write_text(json.dumps(_jsonable(trace), indent=2, sort_keys=True, allow_nan=False) + "\n")
    return report


def _cell_key(r: dict) -> dict:
    return {k: r[k] for k in ("model", "epsilon", "split_seed", "gen_seed")}


def run(config: ExperimentConfig, out_dir=None, threads: int = 1, trace_path=None) -> int:
    """Run the grid and write reports; returns the process exit code."""
    t0 = time.perf_counter()
    records = run_grid(config, threads)
    write_reports(out_dir or config.out, config, records, trace_path)
    failed = sum(r["status"] != "ok" for r in records)
    logger.info("grid of %d cells finished in %.1fs, %d failed", len(records), time.perf_counter() - t0, failed)
    return 1 if failed else 0
