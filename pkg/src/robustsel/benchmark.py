"""Confusion metrics and the training-mode x attack evaluation matrix."""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

import robustsel
from robustsel.adversarial import (
    PerturbationConfig,
    augment_training,
    evasion_attack,
    learn_patterns,
)
from robustsel.consensus import FeatureSetArtifact
from robustsel.ensembles import FAMILIES, ModelConfig, fit, predict, tune
from robustsel.ensembles.serialize import FORMAT, VERSION
from robustsel.errors import DataError, RobustSelError
from robustsel.flowdata import FeatureTable, stratified_split
from robustsel.seeding import derive_seed
from robustsel.selectors import METHOD_VERSIONS

logger = logging.getLogger(__name__)

TRAINING_MODES = ("regular", "adversarial")
METRIC_NAMES = ("acc", "prc", "rcl", "f1s", "fpr")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_predictions(cls, y_true: np.ndarray, y_pred: np.ndarray) -> ConfusionCounts:
        t = np.asarray(y_true) == 1
        p = np.asarray(y_pred) == 1
        if t.shape != p.shape:
            raise ValueError("label and prediction vectors differ in length")
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(t & ~p)),
                   int(np.sum(~t & ~p)))

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    prc: float
    rcl: float
    f1s: float
    fpr: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        return cls(*(float(d[k]) for k in METRIC_NAMES))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def compute_metrics(counts: ConfusionCounts) -> MetricsReport:
    """Zero denominators give 0 for precision, recall, F1 and FPR."""
    if counts.total <= 0:
        raise DataError("cannot compute metrics over zero rows")
    prc = _ratio(counts.tp, counts.tp + counts.fp)
    rcl = _ratio(counts.tp, counts.tp + counts.fn)
    f1s = 2 * prc * rcl / (prc + rcl) if prc + rcl > 0 else 0.0
    return MetricsReport(
        acc=(counts.tp + counts.tn) / counts.total,
        prc=prc,
        rcl=rcl,
        f1s=f1s,
        fpr=_ratio(counts.fp, counts.fp + counts.tn),
    )


def evaluate(model, holdout: FeatureTable) -> tuple[ConfusionCounts, MetricsReport]:
    counts = ConfusionCounts.from_predictions(holdout.labels, predict(model, holdout))
    return counts, compute_metrics(counts)


# -- matrix -----------------------------------------------------------------------

@dataclass
class BenchmarkCell:
    family: str
    feature_set: str
    training: str
    attacked: bool
    counts: ConfusionCounts
    metrics: MetricsReport
    seed: int = 0
    trace: dict | None = None

    @property
    def key(self) -> tuple:
        return (self.seed, self.feature_set, self.family, self.training, self.attacked)

    def to_dict(self) -> dict:
        d = {
            "family": self.family,
            "feature_set": self.feature_set,
            "training": self.training,
            "attacked": self.attacked,
            "seed": self.seed,
            "counts": self.counts.to_dict(),
            "metrics": self.metrics.to_dict(),
        }
        if self.trace is not None:
            d["trace"] = self.trace
        return d

    @classmethod
    def from_dict(cls, d: dict) -> BenchmarkCell:
        return cls(d["family"], d["feature_set"], d["training"], bool(d["attacked"]),
                   ConfusionCounts(**d["counts"]), MetricsReport.from_dict(d["metrics"]),
                   int(d.get("seed", 0)), d.get("trace"))


@dataclass
class BenchmarkMatrix:
    dataset: str
    cells: list[BenchmarkCell]
    provenance: dict = field(default_factory=dict)

    def cell(self, family: str, feature_set: str, training: str, attacked: bool,
             seed: int | None = None) -> BenchmarkCell:
        for c in self.cells:
            if (c.family, c.feature_set, c.training, c.attacked) == (
                    family, feature_set, training, attacked) and (seed is None or c.seed == seed):
                return c
        raise KeyError((family, feature_set, training, attacked, seed))

    def pairs(self) -> list[tuple[int, str, str]]:
        seen: dict[tuple, None] = {}
        for c in self.cells:
            seen.setdefault((c.seed, c.feature_set, c.family), None)
        return list(seen)

    def is_complete(self) -> bool:
        keys = {c.key for c in self.cells}
        return all((s, fs, fam, t, a) in keys for s, fs, fam in self.pairs()
                   for t in TRAINING_MODES for a in (False, True))

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "cells": [c.to_dict() for c in self.cells],
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> BenchmarkMatrix:
        return cls(d["dataset"], [BenchmarkCell.from_dict(c) for c in d["cells"]],
                   d.get("provenance", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> BenchmarkMatrix:
        return cls.from_dict(json.loads(text))

    def __eq__(self, other) -> bool:
        return isinstance(other, BenchmarkMatrix) and self.to_dict() == other.to_dict()


# -- running -------------------------------------------------------------------

def _subsample(train: FeatureTable, max_rows: int | None, seed: int) -> FeatureTable:
    if max_rows is None or train.n_rows <= max_rows:
        return train
    return stratified_split(train, max_rows / train.n_rows, seed).train


def _restrict_groups(groups, names) -> list[list[str]] | None:
    if groups is None:
        return None
    present = set(names)
    out = []
    for g in groups:
        kept = [n for n in g if n in present]
        if len(kept) >= 2:
            out.append(kept)
    return out


@dataclass
class _CellJob:
    seed: int
    fs: FeatureSetArtifact
    family: str
    train: FeatureTable
    holdout: FeatureTable
    augmented: FeatureTable
    pattern: object


def _run_cell(job: _CellJob, attack: PerturbationConfig, max_iter: int, do_tune: bool,
              grid, tune_rows, n_splits: int, base: dict, tune_jobs: int
              ) -> tuple[list[BenchmarkCell], dict]:
    name, fam, seed = job.fs.name, job.family, job.seed
    model_seed = derive_seed(seed, "benchmark", name, fam, "model")
    fixed = dict(base)
    if do_tune:
        sub = _subsample(job.train, tune_rows, derive_seed(seed, "benchmark", name, "tune-rows"))
        config = tune(fam, sub, grid, seed=model_seed, n_splits=n_splits, jobs=tune_jobs,
                      base=fixed)
    else:
        config = ModelConfig(fam, seed=model_seed, **fixed)
    models = {"regular": fit(config, job.train), "adversarial": fit(config, job.augmented)}
    cells = []
    for mode, model in models.items():
        counts, metrics = evaluate(model, job.holdout)
        cells.append(BenchmarkCell(fam, name, mode, False, counts, metrics, seed))
        cfg = PerturbationConfig(attack.magnitude, attack.features_per_step,
                                 derive_seed(seed, "benchmark", name, fam, mode, "attack"))
        result = evasion_attack(model, job.holdout, job.pattern, cfg, max_iter)
        counts, metrics = evaluate(model, result.adversarial_holdout)
        trace = {"iterations_run": result.iterations_run,
                 "initial_recall": result.initial_recall,
                 "recall": [t["recall"] for t in result.trace]}
        cells.append(BenchmarkCell(fam, name, mode, True, counts, metrics, seed, trace))
    return cells, config.to_dict()


def run_benchmark(dataset: FeatureTable, feature_sets: Sequence[FeatureSetArtifact],
                  families: Sequence[str] = FAMILIES, seeds: int | Sequence[int] = 0,
                  attack: PerturbationConfig | None = None, max_iter: int = 15,
                  do_tune: bool = True, grid: dict | None = None, tune_rows: int | None = 5000,
                  n_splits: int = 5, base_config: dict | None = None,
                  groups: Sequence[Sequence[str]] | None = None, jobs: int = 1,
                  dataset_id: str = "dataset", train_fraction: float = 0.7) -> BenchmarkMatrix:
    """Fill the four cells (regular/adversarial training x clean/attacked
    holdout) for every seed, feature set and family.

    ``grid`` maps a family to its search grid (family default when absent);
    ``tune_rows`` caps the stratified subsample used for tuning. Cells run
    on ``jobs`` threads and are assembled in a fixed order.
    """
    attack = attack or PerturbationConfig()
    seeds = [seeds] if isinstance(seeds, (int, np.integer)) else list(seeds)
    families = list(families)
    for fam in families:
        if fam not in FAMILIES:
            raise DataError(f"unknown family {fam!r}")
    if not feature_sets or not families or not seeds:
        raise DataError("benchmark needs at least one feature set, family and seed")
    names = set(dataset.names)
    for fs in feature_sets:
        missing = [f for f in fs.features if f not in names]
        if missing:
            raise DataError(f"feature set {fs.name!r} references unknown features {missing}")
    base = dict(base_config or {})
    base.pop("family", None)
    base.pop("seed", None)

    jobs_list: list[_CellJob] = []
    for seed in seeds:
        split = stratified_split(dataset, train_fraction, seed)
        for fs in feature_sets:
            train, holdout = split.train.select(fs.features), split.holdout.select(fs.features)
            pattern = learn_patterns(train, _restrict_groups(groups, fs.features))
            aug_cfg = PerturbationConfig(attack.magnitude, 1,
                                         derive_seed(seed, "benchmark", fs.name, "augment"))
            augmented = augment_training(train, pattern, aug_cfg)
            for fam in families:
                jobs_list.append(_CellJob(seed, fs, fam, train, holdout, augmented, pattern))

    def run(job: _CellJob):
        fam_grid = (grid or {}).get(job.family) if grid is not None else None
        try:
            return _run_cell(job, attack, max_iter, do_tune, fam_grid, tune_rows, n_splits,
                             base, 1)
        except RobustSelError as exc:
            raise type(exc)(f"cell {job.fs.name}/{job.family} (seed {job.seed}): {exc}") from exc
        except Exception as exc:
            raise RuntimeError(
                f"cell {job.fs.name}/{job.family} (seed {job.seed}) failed: {exc}") from exc

    if jobs > 1 and len(jobs_list) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, jobs_list))
    else:
        results = [run(j) for j in jobs_list]

    cells: list[BenchmarkCell] = []
    configs = []
    for job, (cs, cfg) in zip(jobs_list, results):
        cells.extend(cs)
        configs.append({"seed": job.seed, "feature_set": job.fs.name, "family": job.family,
                        "config": cfg})
        logger.info("cell %s/%s seed %d done", job.fs.name, job.family, job.seed)
    provenance = {
        "seeds": seeds,
        "train_fraction": train_fraction,
        "attack": {"magnitude": attack.magnitude, "features_per_step": attack.features_per_step,
                   "max_iter": max_iter},
        "tuning": {"enabled": do_tune, "max_rows": tune_rows, "n_splits": n_splits},
        "feature_sets": {fs.name: list(fs.features) for fs in feature_sets},
        "configs": configs,
        "versions": {"robustsel": robustsel.__version__, "model_format": f"{FORMAT}/{VERSION}",
                     "selectors": dict(METHOD_VERSIONS)},
    }
    return BenchmarkMatrix(dataset_id, cells, provenance)


# -- rendering -------------------------------------------------------------------

def _pct(v: float) -> str:
    return f"{100.0 * v:.2f}"


def _ordered(matrix: BenchmarkMatrix) -> list[BenchmarkCell]:
    pair_pos = {p: i for i, p in enumerate(matrix.pairs())}
    return sorted(matrix.cells, key=lambda c: (pair_pos[(c.seed, c.feature_set, c.family)],
                                               TRAINING_MODES.index(c.training), c.attacked))


def render_report(matrix: BenchmarkMatrix, fmt: str = "text") -> str:
    """Render as ``json`` (lossless), ``text`` (percent table) or ``csv``."""
    if fmt == "json":
        return matrix.to_json()
    cells = _ordered(matrix)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "feature_set", "family", "training", "attacked", "tp", "fp", "fn",
                    "tn", *METRIC_NAMES])
        for c in cells:
            w.writerow([c.seed, c.feature_set, c.family, c.training,
                        "yes" if c.attacked else "no", c.counts.tp, c.counts.fp, c.counts.fn,
                        c.counts.tn, *(repr(getattr(c.metrics, k)) for k in METRIC_NAMES)])
        return buf.getvalue()
    if fmt not in ("text", "table", "text-table"):
        raise ValueError(f"unknown report format {fmt!r}")
    header = ["Model", "Training", "Attacked", "ACC", "PRC", "RCL", "F1S", "FPR"]
    width = max([len(header[0])] + [len(c.family) for c in cells])
    lines = [f"dataset: {matrix.dataset}"]
    current = None
    for c in cells:
        block = (c.seed, c.feature_set)
        if block != current:
            current = block
            lines.append("")
            lines.append(f"feature set: {c.feature_set}  seed: {c.seed}")
            lines.append(f"{header[0]:<{width}}  {header[1]:<11}  {header[2]:<8}  "
                         + "  ".join(f"{h:>6}" for h in header[3:]))
        lines.append(f"{c.family:<{width}}  {c.training.capitalize():<11}  "
                     f"{'Yes' if c.attacked else 'No':<8}  "
                     + "  ".join(f"{_pct(getattr(c.metrics, k)):>6}" for k in METRIC_NAMES))
    return "\n".join(lines) + "\n"
