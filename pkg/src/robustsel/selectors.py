"""Per-feature relevance scoring with five filter/wrapper methods."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from robustsel.errors import DataError, DegenerateError
from robustsel.flowdata import FeatureTable
from robustsel.seeding import derive_rng

logger = logging.getLogger(__name__)

METHODS = ("info_gain", "chi_squared", "rfe", "mad", "dispersion_ratio")
METHOD_VERSIONS = {
    "info_gain": "knn-mixed-k3+plugin-le16/1",
    "chi_squared": "median-presence/1",
    "rfe": "rf-gain/1",
    "mad": "minmax/1",
    "dispersion_ratio": "am-gm-shift1/1",
}
DISCRETE_MAX_VALUES = 16


@dataclass(frozen=True)
class ContingencyCounts:
    """2x2 term/class table: P = in class with term, Q = term outside class,
    M = in class without term, N = neither."""

    P: int
    Q: int
    M: int
    N: int

    def __post_init__(self):
        if min(self.P, self.Q, self.M, self.N) < 0:
            raise ValueError("contingency counts must be non-negative")

    @property
    def S(self) -> int:
        return self.P + self.Q + self.M + self.N

    @classmethod
    def from_vectors(cls, present: np.ndarray, in_class: np.ndarray) -> ContingencyCounts:
        present = np.asarray(present, dtype=bool)
        in_class = np.asarray(in_class, dtype=bool)
        return cls(
            P=int(np.sum(present & in_class)),
            Q=int(np.sum(present & ~in_class)),
            M=int(np.sum(~present & in_class)),
            N=int(np.sum(~present & ~in_class)),
        )


@dataclass(frozen=True)
class RawScoreVector:
    method: str
    names: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).copy()
        if scores.shape != (len(self.names),):
            raise ValueError("one score per feature name required")
        if not np.isfinite(scores).all() or (scores < 0).any():
            raise ValueError(f"{self.method}: scores must be finite and non-negative")
        scores.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "scores", scores)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "version": METHOD_VERSIONS.get(self.method, "custom"),
            "features": [{"name": n, "score": float(s)} for n, s in zip(self.names, self.scores)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> RawScoreVector:
        feats = d["features"]
        return cls(d["method"], tuple(f["name"] for f in feats),
                   np.array([f["score"] for f in feats], dtype=np.float64))

    def save(self, path: str | Path) -> None:
        from robustsel.io import atomic_write_json

        atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> RawScoreVector:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# -- information gain --------------------------------------------------------------

def entropy(labels: np.ndarray) -> float:
    """Plug-in entropy in nats."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("entropy of an empty vector")
    _, counts = np.unique(labels, return_counts=True)
    p = counts / labels.size
    return float(-np.sum(p * np.log(p)))


def discrete_info_gain(feature: np.ndarray, labels: np.ndarray) -> float:
    """H(Y) - H(Y|X) with X treated as categorical."""
    feature = np.asarray(feature)
    labels = np.asarray(labels)
    n = labels.size
    values, inv = np.unique(feature, return_inverse=True)
    cond = 0.0
    for k in range(values.size):
        mask = inv == k
        cond += mask.sum() / n * entropy(labels[mask])
    return max(0.0, entropy(labels) - cond)


def _is_low_cardinality(feature: np.ndarray) -> bool:
    if not np.array_equal(feature, np.round(feature)):
        return False
    return np.unique(feature).size <= DISCRETE_MAX_VALUES


def knn_info_gain(feature: np.ndarray, labels: np.ndarray, k: int = 3,
                  rng: np.random.Generator | None = None) -> float:
    """Mutual information between a continuous feature and a discrete label,
    estimated from k-nearest-neighbour distances (Ross, 2014).

    The feature is divided by its standard deviation and receives a 1e-10
    relative jitter so that tied values do not produce zero radii.
    """
    x = np.asarray(feature, dtype=np.float64)
    y = np.asarray(labels)
    n = x.size
    rng = rng if rng is not None else np.random.default_rng(0)
    std = x.std()
    if std > 0:
        x = x / std
    x = x + 1e-10 * max(1.0, float(np.mean(np.abs(x)))) * rng.standard_normal(n)

    radius = np.zeros(n)
    k_all = np.zeros(n)
    label_counts = np.zeros(n)
    for c in np.unique(y):
        mask = y == c
        count = int(mask.sum())
        label_counts[mask] = count
        if count > 1:
            kc = min(k, count - 1)
            pts = x[mask][:, None]
            dist, _ = cKDTree(pts).query(pts, k=kc + 1)
            radius[mask] = np.nextafter(dist[:, -1], 0)
            k_all[mask] = kc
    keep = label_counts > 1
    if keep.sum() < 2:
        return 0.0
    x, radius, k_all, label_counts = x[keep], radius[keep], k_all[keep], label_counts[keep]
    m = keep.sum()
    # exact |xi - xj| <= r counts; x +/- r comparisons round onto the boundary
    pts = x[:, None]
    within = cKDTree(pts).query_ball_point(pts, radius, return_length=True)
    mi = (digamma(m) + np.mean(digamma(k_all)) - np.mean(digamma(label_counts))
          - np.mean(digamma(within)))
    return max(0.0, float(mi))


def info_gain(feature: np.ndarray, labels: np.ndarray, k: int = 3, kind: str | None = None,
              rng: np.random.Generator | None = None) -> float:
    """Information gain of ``labels`` from ``feature``.

    Integer and flag features with at most 16 distinct values use the exact
    plug-in estimate; everything else goes through :func:`knn_info_gain`.
    With ``kind=None`` the discrete path is chosen whenever the column is
    whole-numbered with at most 16 distinct values.
    """
    feature = np.asarray(feature, dtype=np.float64)
    labels = np.asarray(labels)
    if feature.shape != labels.shape:
        raise ValueError("feature and labels differ in length")
    if k < 1:
        raise ValueError("k must be at least 1")
    if feature.size == 0:
        raise ValueError("empty feature")
    if np.all(feature == feature[0]):
        return 0.0
    discrete = _is_low_cardinality(feature) and (kind is None or kind in ("integer", "flag"))
    if discrete:
        return discrete_info_gain(feature, labels)
    return knn_info_gain(feature, labels, k=k, rng=rng)


# -- chi-squared ------------------------------------------------------------------

def chi_squared(counts: ContingencyCounts) -> float:
    P, Q, M, N = (float(v) for v in (counts.P, counts.Q, counts.M, counts.N))
    denom = (P + M) * (Q + N) * (P + Q) * (M + N)
    if denom == 0:
        raise DegenerateError("chi-squared undefined: a marginal sum is zero")
    return (P + Q + M + N) * (P * N - M * Q) ** 2 / denom


def binarize_for_chi2(feature: np.ndarray) -> np.ndarray:
    """Term presence := value strictly above the column median."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.size == 0:
        raise ValueError("empty feature")
    return feature > np.median(feature)


# -- unsupervised dispersion measures -------------------------------------------------

def _minmax(feature: np.ndarray) -> np.ndarray:
    lo, hi = feature.min(), feature.max()
    if hi == lo:
        return np.zeros_like(feature)
    return (feature - lo) / (hi - lo)


def mad(feature: np.ndarray) -> float:
    """Mean absolute deviation from the mean, on the min-max scaled column."""
    x = np.asarray(feature, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty feature")
    s = _minmax(x)
    return float(np.mean(np.abs(s - s.mean())))


def dispersion_ratio(feature: np.ndarray) -> float:
    """Arithmetic over geometric mean of ``x - min(x) + 1``; always >= 1."""
    x = np.asarray(feature, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty feature")
    if np.all(x == x[0]):
        return 1.0
    return am_gm_ratio(x - x.min() + 1.0)


def am_gm_ratio(positive: np.ndarray) -> float:
    """Arithmetic over geometric mean of strictly positive values."""
    x = np.asarray(positive, dtype=np.float64)
    if x.size == 0 or (x <= 0).any():
        raise ValueError("AM/GM needs a non-empty vector of positive values")
    gm = np.exp(np.mean(np.log(x)))
    return float(max(x.mean() / gm, 1.0))


# -- recursive feature elimination ------------------------------------------------

def default_rfe_learner(seed: int = 0):
    """100-tree random forest at its default configuration."""
    from robustsel.ensembles import ModelConfig

    return ModelConfig(family="random_forest", seed=seed)


def rfe_elimination_order(table: FeatureTable, fit_importances: Callable[[FeatureTable], np.ndarray]
                          ) -> list[int]:
    """Column indices in the order they are eliminated (last = best)."""
    remaining = list(range(table.n_features))
    order: list[int] = []
    while len(remaining) > 1:
        sub = table.select([table.names[i] for i in remaining])
        imp = np.asarray(fit_importances(sub), dtype=np.float64)
        if not np.any(imp > 0):
            logger.warning("RFE: learner assigned zero importance to all %d features; "
                           "eliminating the lowest column index", len(remaining))
        # argmin takes the first minimum, i.e. the lowest remaining index on ties
        worst = int(np.argmin(imp))
        order.append(remaining.pop(worst))
    order.append(remaining[0])
    return order


def rfe_scores_from_order(order: list[int], d: int) -> np.ndarray:
    """Rank r (1 = last survivor) maps to (d - r + 1) / sum(1..d)."""
    total = d * (d + 1) / 2
    scores = np.empty(d)
    for pos, col in enumerate(order):
        rank = d - pos
        scores[col] = (d - rank + 1) / total
    return scores


def rfe_rank(table: FeatureTable, base_learner=None, seed: int = 0) -> RawScoreVector:
    """Rank features by recursive elimination, one feature per iteration.

    ``base_learner`` is either a :class:`~robustsel.ensembles.ModelConfig`
    or a callable ``table -> importances``.
    """
    if table.n_features < 2:
        raise DataError("RFE needs at least 2 features")
    if not 0 < table.n_malicious < table.n_rows:
        raise DataError("RFE needs both classes present")
    learner = base_learner if base_learner is not None else default_rfe_learner(seed)
    if callable(learner):
        fit_imp = learner
    else:
        from robustsel.ensembles import fit

        def fit_imp(sub: FeatureTable) -> np.ndarray:
            return fit(learner, sub).feature_importances

    order = rfe_elimination_order(table, fit_imp)
    return RawScoreVector("rfe", table.names, rfe_scores_from_order(order, table.n_features))


# -- dispatch -----------------------------------------------------------------------

def score_all(table: FeatureTable, method: str, seed: int = 0, k: int = 3,
              rfe_learner=None) -> RawScoreVector:
    """Score every feature of ``table`` with one method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    X, y = table.values, table.labels
    d = table.n_features
    if method == "rfe":
        return rfe_rank(table, rfe_learner, seed=seed)
    scores = np.zeros(d)
    if method == "info_gain":
        for j in range(d):
            rng = derive_rng(seed, "selectors", "info_gain", table.names[j])
            scores[j] = info_gain(X[:, j], y, k=k, kind=table.schema.kinds[j], rng=rng)
    elif method == "chi_squared":
        malicious = y == 1
        for j in range(d):
            counts = ContingencyCounts.from_vectors(binarize_for_chi2(X[:, j]), malicious)
            try:
                scores[j] = chi_squared(counts)
            except DegenerateError:
                scores[j] = 0.0
    elif method == "mad":
        scores = np.array([mad(X[:, j]) for j in range(d)])
    elif method == "dispersion_ratio":
        scores = np.array([dispersion_ratio(X[:, j]) for j in range(d)])
        # constant columns carry no dispersion; score them zero rather than 1
        const = np.all(X == X[:1], axis=0) if table.n_rows else np.ones(d, bool)
        scores[const] = 0.0
    return RawScoreVector(method, table.names, scores)
