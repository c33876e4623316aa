"""Interval-pattern perturbations: adversarial training data and targeted
gray-box evasion attacks against fitted ensembles.

A pattern holds, per class, the observed [min, max] of every feature plus
ordering constraints over correlated feature groups (e.g. min <= mean <= max
of one inter-arrival-time family). Perturbations move malicious rows toward
the benign intervals and never leave them.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from robustsel.errors import DataError
from robustsel.flowdata import FeatureTable
from robustsel.seeding import derive_rng, derive_seed

logger = logging.getLogger(__name__)

BENIGN, MALICIOUS = 0, 1

_STAT_ORDER = {"min": 0, "mean": 1, "avg": 1, "max": 2}


@dataclass(frozen=True)
class PerturbationConfig:
    magnitude: float = 0.25
    features_per_step: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.magnitude <= 1.0:
            raise ValueError("magnitude must be in (0, 1]")
        if self.features_per_step < 1:
            raise ValueError("features_per_step must be at least 1")


@dataclass(frozen=True, eq=False)
class PerturbationPattern:
    names: tuple[str, ...]
    integer: np.ndarray  # bool per feature: perturb on whole numbers
    lo: np.ndarray  # (2, d) per-class interval lower bounds
    hi: np.ndarray  # (2, d)
    groups: tuple[tuple[int, ...], ...] = ()
    prev_in_group: np.ndarray = field(default=None)
    next_in_group: np.ndarray = field(default=None)

    def __post_init__(self):
        d = len(self.names)
        prev = np.full(d, -1, dtype=np.int64)
        nxt = np.full(d, -1, dtype=np.int64)
        for grp in self.groups:
            for a, b in zip(grp[:-1], grp[1:]):
                nxt[a] = b
                prev[b] = a
        object.__setattr__(self, "prev_in_group", prev)
        object.__setattr__(self, "next_in_group", nxt)

    def interval(self, cls: int, feature: int) -> tuple[float, float]:
        return float(self.lo[cls, feature]), float(self.hi[cls, feature])

    def satisfiable(self, cls: int = BENIGN) -> bool:
        for grp in self.groups:
            for a, b in zip(grp[:-1], grp[1:]):
                if self.lo[cls, a] > self.hi[cls, b]:
                    return False
        return True

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "integer": self.integer.tolist(),
            "intervals": {
                str(c): {"lo": self.lo[c].tolist(), "hi": self.hi[c].tolist()} for c in (0, 1)
            },
            "groups": [[self.names[i] for i in g] for g in self.groups],
        }


# -- correlated groups --------------------------------------------------------------

def _stat_token(name: str) -> tuple[str, int] | None:
    parts = [p for p in re.split(r"[\s_.\-/]+", name.strip().casefold()) if p]
    hits = [i for i, p in enumerate(parts) if p in _STAT_ORDER]
    if len(hits) != 1:
        return None
    i = hits[0]
    return " ".join(parts[:i] + parts[i + 1 :]), _STAT_ORDER[parts[i]]


def default_groups(names: Sequence[str]) -> list[list[str]]:
    """Group features naming the same characteristic with min/mean/max
    variants (e.g. ``Fwd IAT Min``/``Fwd IAT Mean``/``Fwd IAT Max``)."""
    families: dict[str, dict[int, str]] = {}
    for n in names:
        tok = _stat_token(n)
        if tok is None:
            continue
        base, rank = tok
        families.setdefault(base, {}).setdefault(rank, n)
    return [[members[r] for r in sorted(members)] for base, members in sorted(families.items())
            if len(members) >= 2]


def load_groups(path: str | Path) -> list[list[str]]:
    """Read ``[{"features": [...], "ordering": "sorted"}, ...]``."""
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
        groups = []
        for entry in spec:
            if entry.get("ordering", "sorted") != "sorted":
                raise DataError(f"unsupported group ordering {entry.get('ordering')!r}")
            groups.append(list(entry["features"]))
        return groups
    except OSError as exc:
        raise DataError(f"cannot read group spec {path}: {exc}") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed group spec {path}: {exc}") from None


def learn_patterns(train: FeatureTable, groups: Sequence[Sequence[str]] | None = None
                   ) -> PerturbationPattern:
    """Per-class observed intervals plus the ordering groups the training
    data respects. ``groups=None`` uses :func:`default_groups`; groups the
    data violates are dropped with a warning."""
    if train.n_rows == 0:
        raise DataError("cannot learn patterns from an empty table")
    names = train.names
    d = train.n_features
    X, y = train.values, train.labels
    lo = np.zeros((2, d))
    hi = np.zeros((2, d))
    for c in (BENIGN, MALICIOUS):
        rows = X[y == c]
        if rows.shape[0] == 0:
            rows = X
        lo[c] = rows.min(axis=0)
        hi[c] = rows.max(axis=0)

    spec = default_groups(names) if groups is None else [list(g) for g in groups]
    seen: set[int] = set()
    kept: list[tuple[int, ...]] = []
    for grp in spec:
        missing = [n for n in grp if n not in names]
        if missing:
            raise DataError(f"group references unknown feature(s) {missing}")
        idx = tuple(names.index(n) for n in grp)
        if len(idx) < 2:
            continue
        if seen & set(idx):
            raise DataError(f"feature(s) of group {list(grp)} already belong to another group")
        cols = X[:, idx]
        if not np.all(np.diff(cols, axis=1) >= 0):
            logger.warning("group %s: training data violates min <= mean <= max; "
                           "constraint not recorded", list(grp))
            continue
        seen |= set(idx)
        kept.append(idx)
    integer = np.array([k != "continuous" for k in train.schema.kinds])
    return PerturbationPattern(tuple(names), integer, lo, hi, tuple(kept))


# -- perturbation -----------------------------------------------------------------

def perturb_rows(X: np.ndarray, pattern: PerturbationPattern, magnitude: float,
                 features_per_step: int, keys: np.ndarray, u_target: np.ndarray,
                 u_step: np.ndarray, target_class: int = BENIGN) -> np.ndarray:
    """Vectorized perturbation of every row of ``X``.

    ``keys`` (rows x d) picks the features to move (the smallest keys among
    features with a non-degenerate target interval); ``u_target`` and
    ``u_step`` (rows x features_per_step) are uniforms in [0, 1) for the
    target point and the step length of each move.
    """
    X = np.array(X, dtype=np.float64, copy=True)
    m, d = X.shape
    if m == 0:
        return X
    lo, hi = pattern.lo[target_class], pattern.hi[target_class]
    width = hi - lo
    movable = width > 0
    n_move = min(features_per_step, int(movable.sum()))
    if n_move == 0:
        return X
    masked = np.where(movable[None, :], keys, np.inf)
    chosen = np.argsort(masked, axis=1, kind="stable")[:, :n_move]
    rows = np.arange(m)
    prev, nxt = pattern.prev_in_group, pattern.next_in_group
    for slot in range(n_move):
        f = chosen[:, slot]
        x = X[rows, f]
        flo, fhi, fw = lo[f], hi[f], width[f]
        target = flo + u_target[:, slot] * fw
        step = u_step[:, slot] * magnitude * fw
        delta = target - x
        new = x + np.sign(delta) * np.minimum(step, np.abs(delta))
        new = np.clip(new, flo, fhi)
        is_int = pattern.integer[f]
        if is_int.any():
            r = np.round(new)
            # guarantee a whole-unit move when rounding undoes a real step
            stuck = is_int & (r == x) & (np.abs(delta) >= 0.5)
            r = np.where(stuck, x + np.sign(delta), r)
            r = np.clip(r, np.ceil(flo), np.floor(fhi))
            new = np.where(is_int, r, new)
        pf, nf = prev[f], nxt[f]
        lower = np.where(pf >= 0, X[rows, np.maximum(pf, 0)], -np.inf)
        upper = np.where(nf >= 0, X[rows, np.maximum(nf, 0)], np.inf)
        ok = lower <= upper
        new = np.clip(new, lower, np.where(ok, upper, lower))
        ok &= (new >= flo) & (new <= fhi)
        if is_int.any():
            ok &= ~is_int | (new == np.round(new))
        X[rows, f] = np.where(ok, new, x)
    return X


def _draws(rng: np.random.Generator, m: int, d: int, k: int):
    return rng.random((m, d)), rng.random((m, k)), rng.random((m, k))


def perturb(sample: np.ndarray, pattern: PerturbationPattern, cfg: PerturbationConfig,
            target_class: int = BENIGN, rng: np.random.Generator | None = None) -> np.ndarray:
    """Perturb a single row toward ``target_class``'s intervals."""
    x = np.asarray(sample, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != len(pattern.names):
        raise DataError(f"sample has {x.shape[1]} features, pattern has {len(pattern.names)}")
    rng = rng if rng is not None else derive_rng(cfg.seed, "adversarial", "perturb")
    keys, ut, us = _draws(rng, 1, x.shape[1], cfg.features_per_step)
    return perturb_rows(x, pattern, cfg.magnitude, cfg.features_per_step, keys, ut, us,
                        target_class)[0]


def augment_training(train: FeatureTable, pattern: PerturbationPattern,
                     cfg: PerturbationConfig) -> FeatureTable:
    """Original rows followed by one single-feature perturbed copy of every
    malicious row (labels kept malicious)."""
    mal = np.flatnonzero(train.labels == MALICIOUS)
    if mal.size == 0:
        raise DataError("augmentation needs malicious rows")
    rng = derive_rng(cfg.seed, "adversarial", "augment")
    keys, ut, us = _draws(rng, mal.size, train.n_features, 1)
    copies = perturb_rows(train.values[mal], pattern, cfg.magnitude, 1, keys, ut, us, BENIGN)
    return FeatureTable(
        train.schema,
        np.vstack([train.values, copies]),
        np.concatenate([train.labels, np.ones(mal.size, dtype=np.int64)]),
        dict(train.metadata),
    )


# -- evasion attack ----------------------------------------------------------------

@dataclass
class AttackResult:
    adversarial_holdout: FeatureTable
    iterations_run: int
    trace: list[dict]
    evaded_mask: np.ndarray  # per malicious row of the holdout, in row order
    initial_detected: int
    n_malicious: int
    queries: int = 0
    seed: int = 0

    @property
    def initial_recall(self) -> float:
        return self.initial_detected / self.n_malicious if self.n_malicious else 0.0

    @property
    def final_recall(self) -> float:
        return self.trace[-1]["recall"] if self.trace else self.initial_recall

    def recalls(self) -> list[float]:
        return [self.initial_recall] + [t["recall"] for t in self.trace]

    def to_dict(self) -> dict:
        return {
            "iterations_run": self.iterations_run,
            "n_malicious": self.n_malicious,
            "initial_detected": self.initial_detected,
            "initial_recall": self.initial_recall,
            "queries": self.queries,
            "seed": self.seed,
            "trace": list(self.trace),
            "evaded": self.evaded_mask.astype(int).tolist(),
        }


def _predict_labels(model, X: np.ndarray) -> np.ndarray:
    if hasattr(model, "predict_labels"):
        return np.asarray(model.predict_labels(X), dtype=np.int64)
    from robustsel.ensembles import predict

    return predict(model, X)


def evasion_attack(model, holdout: FeatureTable, pattern: PerturbationPattern,
                   cfg: PerturbationConfig, max_iter: int = 15) -> AttackResult:
    """Targeted malicious-to-benign attack using only hard-label queries.

    Each iteration perturbs every malicious row the model still detects
    (continuing from its previous candidate); rows that evade are frozen.
    Stops when nothing is detected or after ``max_iter`` iterations.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if tuple(holdout.names) != tuple(pattern.names):
        raise DataError("holdout schema does not match the perturbation pattern")
    X = holdout.values.copy()
    mal = np.flatnonzero(holdout.labels == MALICIOUS)
    n_mal = mal.size
    if n_mal == 0:
        raise DataError("holdout has no malicious rows to attack")
    d = holdout.n_features
    k = cfg.features_per_step
    detected = _predict_labels(model, X[mal]) == 1
    queries = n_mal
    initial = int(detected.sum())
    trace: list[dict] = []
    it = 0
    while detected.any() and it < max_iter:
        rng = derive_rng(cfg.seed, "adversarial", "attack", it)
        keys, ut, us = _draws(rng, n_mal, d, k)
        pos = np.flatnonzero(detected)
        rows = mal[pos]
        cand = perturb_rows(X[rows], pattern, cfg.magnitude, k, keys[pos], ut[pos], us[pos],
                            BENIGN)
        X[rows] = cand
        still = _predict_labels(model, cand) == 1
        queries += rows.size
        detected[pos] = still
        it += 1
        n_det = int(detected.sum())
        trace.append({"iteration": it, "detected": n_det, "recall": n_det / n_mal})
    return AttackResult(holdout.with_values(X), it, trace, ~detected, initial, n_mal, queries,
                        cfg.seed)


def model_specific_holdouts(models: Mapping[str, object] | Sequence[object],
                            holdout: FeatureTable, pattern: PerturbationPattern,
                            cfg: PerturbationConfig, max_iter: int = 15) -> dict:
    """Attack each model separately; seeds derive from ``cfg.seed`` and the
    model's key (list position when a sequence is given)."""
    items = models.items() if isinstance(models, Mapping) else enumerate(models)
    out = {}
    for key, model in items:
        sub = PerturbationConfig(cfg.magnitude, cfg.features_per_step,
                                 derive_seed(cfg.seed, "adversarial", "model", key))
        out[key] = evasion_attack(model, holdout, pattern, sub, max_iter)
    return out
