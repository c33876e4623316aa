"""Fitting and prediction for the four tree-ensemble families."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from robustsel.errors import DataError
from robustsel.flowdata import FeatureTable
from robustsel.seeding import derive_seed
from robustsel.ensembles import _kernels as K
from robustsel.ensembles.binning import bin_matrix, build_histogram_bins
from robustsel.ensembles.config import ModelConfig

logger = logging.getLogger(__name__)


def gini(pos: float, neg: float) -> float:
    """Gini impurity of a two-class node."""
    total = pos + neg
    if total <= 0:
        raise ValueError("gini of an empty node")
    p = pos / total
    return 1.0 - p * p - (1.0 - p) ** 2


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def log_loss(y: np.ndarray, raw: np.ndarray) -> float:
    """Mean binary cross-entropy of log-odds ``raw``."""
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


@dataclass
class Tree:
    """Flat binary tree. ``feature[i] == -1`` marks a leaf; rows with
    ``x[feature] <= threshold`` go left."""

    feature: np.ndarray
    threshold: np.ndarray
    split_bin: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    gain: np.ndarray
    depth: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def max_depth(self) -> int:
        return int(self.depth.max()) if self.n_nodes else 0

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def to_nested(self, node: int = 0) -> dict[str, Any]:
        if self.feature[node] < 0:
            return {"leaf": float(self.value[node]), "n": float(self.n_samples[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "bin": int(self.split_bin[node]),
            "gain": float(self.gain[node]),
            "n": float(self.n_samples[node]),
            "left": self.to_nested(int(self.left[node])),
            "right": self.to_nested(int(self.right[node])),
        }

    @classmethod
    def from_nested(cls, root: dict[str, Any]) -> Tree:
        cols: dict[str, list] = {k: [] for k in ("feature", "threshold", "split_bin", "left", "right",
                                                "value", "n_samples", "gain", "depth")}
        stack = [(root, -1, False, 0)]
        while stack:
            node, parent, is_right, depth = stack.pop()
            i = len(cols["feature"])
            if parent >= 0:
                cols["right" if is_right else "left"][parent] = i
            leaf = "leaf" in node
            cols["feature"].append(-1 if leaf else int(node["feature"]))
            cols["threshold"].append(0.0 if leaf else float(node["threshold"]))
            cols["split_bin"].append(-1 if leaf else int(node.get("bin", -1)))
            cols["left"].append(-1)
            cols["right"].append(-1)
            cols["value"].append(float(node["leaf"]) if leaf else 0.0)
            cols["n_samples"].append(float(node.get("n", 0.0)))
            cols["gain"].append(0.0 if leaf else float(node.get("gain", 0.0)))
            cols["depth"].append(depth)
            if not leaf:
                stack.append((node["right"], i, True, depth + 1))
                stack.append((node["left"], i, False, depth + 1))
        return cls(
            feature=np.asarray(cols["feature"], dtype=np.int64),
            threshold=np.asarray(cols["threshold"], dtype=np.float64),
            split_bin=np.asarray(cols["split_bin"], dtype=np.int64),
            left=np.asarray(cols["left"], dtype=np.int64),
            right=np.asarray(cols["right"], dtype=np.int64),
            value=np.asarray(cols["value"], dtype=np.float64),
            n_samples=np.asarray(cols["n_samples"], dtype=np.float64),
            gain=np.asarray(cols["gain"], dtype=np.float64),
            depth=np.asarray(cols["depth"], dtype=np.int64),
        )

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        roots = np.zeros(1, dtype=np.int64)
        return K.ensemble_sum(np.ascontiguousarray(X, dtype=np.float64), self.feature,
                              self.threshold, self.left, self.right, self.value, roots, 1)


@dataclass
class TrainedEnsemble:
    config: ModelConfig
    feature_names: tuple[str, ...]
    base_score: float
    trees: list[Tree]
    bin_edges: list[np.ndarray]
    feature_importances: np.ndarray
    # cyclic_gam only: feature of each tree and the per-bin additive shape
    tree_features: list[int] | None = None
    shapes: list[np.ndarray] | None = None
    metadata: dict[str, Any] = field(default_factory=dict)
    _flat: tuple | None = field(default=None, repr=False)

    @property
    def family(self) -> str:
        return self.config.family

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _flatten(self) -> tuple:
        if self._flat is None:
            feats, thr, lefts, rights, vals, roots = [], [], [], [], [], []
            offset = 0
            for t in self.trees:
                roots.append(offset)
                feats.append(t.feature)
                thr.append(t.threshold)
                lefts.append(np.where(t.left >= 0, t.left + offset, -1))
                rights.append(np.where(t.right >= 0, t.right + offset, -1))
                vals.append(t.value)
                offset += t.n_nodes

            def cat(parts, dtype):
                return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)

            self._flat = (cat(feats, np.int64), cat(thr, np.float64), cat(lefts, np.int64),
                          cat(rights, np.int64), cat(vals, np.float64),
                          np.asarray(roots, dtype=np.int64))
        return self._flat

    def raw_sum(self, X: np.ndarray, n_trees: int | None = None) -> np.ndarray:
        """Sum of the first ``n_trees`` tree outputs for each row of ``X``."""
        n_trees = self.n_trees if n_trees is None else min(n_trees, self.n_trees)
        X = np.ascontiguousarray(X, dtype=np.float64)
        if n_trees == 0:
            return np.zeros(X.shape[0])
        f, t, l, r, v, roots = self._flatten()
        return K.ensemble_sum(X, f, t, l, r, v, roots, n_trees)


def _matrix(model: TrainedEnsemble, rows) -> np.ndarray:
    if isinstance(rows, FeatureTable):
        if tuple(rows.names) != tuple(model.feature_names):
            raise DataError(
                "schema mismatch: model was trained on "
                f"{list(model.feature_names)}, rows have {list(rows.names)}"
            )
        return rows.values
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != len(model.feature_names):
        raise DataError(f"expected {len(model.feature_names)} columns, got {X.shape[1]}")
    return X


def decision_function(model: TrainedEnsemble, rows, n_trees: int | None = None) -> np.ndarray:
    """Log-odds for boosted families; vote fraction for the random forest.

    A cyclic GAM is evaluated through its per-feature shape tables (bias
    plus one lookup per feature, in feature order); ``n_trees`` forces the
    tree-sum route instead.
    """
    X = _matrix(model, rows)
    if model.shapes is not None and n_trees is None:
        return model.base_score + shape_contributions(model, X).sum(axis=1)
    if model.family == "random_forest":
        if model.n_trees == 0:
            return np.full(X.shape[0], model.base_score)
        n = model.n_trees if n_trees is None else min(n_trees, model.n_trees)
        return model.raw_sum(X, n) / n
    return model.base_score + model.raw_sum(X, n_trees)


def predict_proba(model: TrainedEnsemble, rows) -> np.ndarray:
    """Per-row probability of the malicious class."""
    d = decision_function(model, rows)
    if model.family == "random_forest":
        return d
    return sigmoid(d)


def predict(model: TrainedEnsemble, rows, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba(model, rows) > threshold).astype(np.int64)


def feature_importances(model: TrainedEnsemble) -> np.ndarray:
    return model.feature_importances.copy()


def shape_contributions(model: TrainedEnsemble, rows) -> np.ndarray:
    """Per-feature additive log-odds terms of a cyclic GAM (n_rows x d)."""
    if model.shapes is None:
        raise ValueError("shape contributions exist only for cyclic_gam models")
    X = _matrix(model, rows)
    out = np.empty(X.shape)
    for j, (edges, shape) in enumerate(zip(model.bin_edges, model.shapes)):
        out[:, j] = shape[np.searchsorted(edges, X[:, j], side="left")]
    return out


# -- fitting --------------------------------------------------------------------

def _make_tree(arrays, edges: list[np.ndarray], values: np.ndarray) -> Tree:
    feature, split_bin, left, right, _, _, count, gain, depth = arrays
    threshold = np.zeros(feature.shape[0])
    internal = feature >= 0
    for i in np.flatnonzero(internal):
        threshold[i] = edges[feature[i]][split_bin[i]]
    values = np.where(internal, 0.0, values)
    return Tree(feature=feature, threshold=threshold, split_bin=split_bin, left=left,
                right=right, value=values, n_samples=count, gain=np.where(internal, gain, 0.0),
                depth=depth)


def _normalized_importances(gains: np.ndarray) -> np.ndarray:
    total = gains.sum()
    return gains / total if total > 0 else np.zeros_like(gains)


class _Prepared:
    def __init__(self, config: ModelConfig, train: FeatureTable):
        if train.n_features == 0:
            raise DataError("cannot fit a model on an empty feature set")
        y = train.labels
        n_pos = int(y.sum())
        if n_pos == 0 or n_pos == y.size:
            raise DataError("training set must contain both classes")
        self.X = train.values
        self.y = y.astype(np.float64)
        self.n, self.d = self.X.shape
        self.edges = [build_histogram_bins(self.X[:, j], config.max_bins) for j in range(self.d)]
        self.Xb = np.ascontiguousarray(bin_matrix(self.X, self.edges))
        self.n_bins = np.asarray([e.size + 1 for e in self.edges], dtype=np.int64)
        self.prior = n_pos / y.size


def _seed32(config: ModelConfig, *names) -> int:
    return derive_seed(config.seed, config.family, *names) % (2**32)


def _fit_random_forest(config: ModelConfig, P: _Prepared) -> TrainedEnsemble:
    trees, gains = [], np.zeros(P.d)
    allowed = np.arange(P.d, dtype=np.int64)
    mf = min(config.max_features, P.d)
    for t in range(config.n_estimators):
        rng = np.random.default_rng(_seed32(config, "bootstrap", t))
        counts = np.bincount(rng.integers(0, P.n, P.n), minlength=P.n).astype(np.float64)
        rows = np.flatnonzero(counts > 0).astype(np.int64)
        arrays = K.grow_tree(P.Xb, rows, P.y * counts, counts, counts, P.n_bins, allowed, mf,
                             K.GINI, config.max_depth, -1, float(config.min_leaf), 0.0,
                             float(config.min_gain), 0.0, _seed32(config, "tree", t))
        G, H = arrays[4], arrays[5]
        # hard vote per tree; an exact tie votes benign
        votes = (G > 0.5 * H).astype(np.float64)
        tree = _make_tree(arrays, P.edges, votes)
        trees.append(tree)
        np.add.at(gains, tree.feature[tree.feature >= 0], tree.gain[tree.feature >= 0])
    return TrainedEnsemble(config, (), P.prior, trees, P.edges, _normalized_importances(gains))


def goss_sample(grad: np.ndarray, top_fraction: float, other_fraction: float,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Gradient-based one-side sampling.

    Keeps the ``top_fraction * n`` rows of largest ``|grad|``, draws
    ``other_fraction * n`` of the remaining rows uniformly, and returns
    (sorted row indices, per-row weights) with sampled rows weighted by
    ``(1 - top_fraction) / other_fraction``.
    """
    n = grad.size
    n_top = int(top_fraction * n)
    n_other = int(other_fraction * n)
    order = np.argsort(-np.abs(grad), kind="stable")
    top = order[:n_top]
    rest = order[n_top:]
    n_other = min(n_other, rest.size)
    other = rng.choice(rest, size=n_other, replace=False) if n_other else rest[:0]
    weights = np.zeros(n)
    weights[top] = 1.0
    weights[other] = (1.0 - top_fraction) / other_fraction
    rows = np.sort(np.concatenate([top, other])).astype(np.int64)
    return rows, weights


def _feature_subset(config: ModelConfig, d: int, t: int) -> np.ndarray:
    k = max(1, int(round(config.feature_subsample * d)))
    if k >= d:
        return np.arange(d, dtype=np.int64)
    rng = np.random.default_rng(_seed32(config, "colsample", t))
    return np.sort(rng.choice(d, size=k, replace=False)).astype(np.int64)


def _fit_boosted(config: ModelConfig, P: _Prepared) -> TrainedEnsemble:
    leafwise = config.family == "leafwise_gbt"
    base = float(np.log(P.prior / (1.0 - P.prior)))
    F = np.full(P.n, base)
    trees, gains = [], np.zeros(P.d)
    losses = [log_loss(P.y, F)]
    all_rows = np.arange(P.n, dtype=np.int64)
    ones = np.ones(P.n)
    for t in range(config.n_estimators):
        p = sigmoid(F)
        g = p - P.y
        h = np.maximum(p * (1.0 - p), 1e-16)
        g_full, h_full = g, h
        if leafwise:
            rng = np.random.default_rng(_seed32(config, "goss", t))
            rows, w = goss_sample(g, config.goss_top_fraction, config.goss_other_fraction, rng)
            g, h = g * w, h * w
            cnt = (w > 0).astype(np.float64)
        else:
            rows, cnt = all_rows, ones
        max_leaves = config.max_leaves if leafwise else -1
        allowed = _feature_subset(config, P.d, t)
        arrays = K.grow_tree(P.Xb, rows, g, h, cnt, P.n_bins, allowed, 0, K.NEWTON,
                             config.max_depth, max_leaves, float(config.min_leaf),
                             float(config.min_child_weight), float(config.min_gain),
                             float(config.reg_lambda), _seed32(config, "tree", t))
        G, H = arrays[4], arrays[5]
        if leafwise:
            # structure comes from the GOSS sample; leaf values use every row
            leaf_of = K.tree_predict_binned(P.Xb, arrays[0], arrays[1], arrays[2], arrays[3],
                                            np.arange(G.size, dtype=np.float64)).astype(np.int64)
            G = np.bincount(leaf_of, weights=g_full, minlength=G.size)
            H = np.bincount(leaf_of, weights=h_full, minlength=G.size)
        leaf_values = -config.learning_rate * G / (H + config.reg_lambda)
        tree = _make_tree(arrays, P.edges, leaf_values)
        F = F + K.tree_predict_binned(P.Xb, tree.feature, tree.split_bin, tree.left,
                                      tree.right, tree.value)
        trees.append(tree)
        losses.append(log_loss(P.y, F))
        np.add.at(gains, tree.feature[tree.feature >= 0], tree.gain[tree.feature >= 0])
    return TrainedEnsemble(config, (), base, trees, P.edges, _normalized_importances(gains),
                           metadata={"train_loss": losses})


def _fit_cyclic_gam(config: ModelConfig, P: _Prepared) -> TrainedEnsemble:
    base = float(np.log(P.prior / (1.0 - P.prior)))
    F = np.full(P.n, base)
    trees, tree_features, gains = [], [], np.zeros(P.d)
    shapes = [np.zeros(nb) for nb in P.n_bins]
    losses = [log_loss(P.y, F)]
    rows = np.arange(P.n, dtype=np.int64)
    ones = np.ones(P.n)
    for r in range(config.n_estimators):
        for j in range(P.d):
            p = sigmoid(F)
            g = p - P.y
            h = np.maximum(p * (1.0 - p), 1e-16)
            arrays = K.grow_tree(P.Xb, rows, g, h, ones, P.n_bins,
                                 np.array([j], dtype=np.int64), 0, K.NEWTON, config.max_depth,
                                 config.max_leaves, float(config.min_leaf),
                                 float(config.min_child_weight), float(config.min_gain),
                                 float(config.reg_lambda), _seed32(config, "tree", r, j))
            G, H = arrays[4], arrays[5]
            leaf_values = -config.learning_rate * G / (H + config.reg_lambda)
            tree = _make_tree(arrays, P.edges, leaf_values)
            per_bin = K.tree_predict_binned(
                np.repeat(np.arange(P.n_bins[j], dtype=np.uint8)[:, None], P.d, axis=1),
                tree.feature, tree.split_bin, tree.left, tree.right, tree.value)
            shapes[j] += per_bin
            F = F + per_bin[P.Xb[:, j]]
            trees.append(tree)
            tree_features.append(j)
            np.add.at(gains, tree.feature[tree.feature >= 0], tree.gain[tree.feature >= 0])
        losses.append(log_loss(P.y, F))
    return TrainedEnsemble(config, (), base, trees, P.edges, _normalized_importances(gains),
                           tree_features=tree_features, shapes=shapes,
                           metadata={"train_loss": losses})


_FITTERS = {
    "random_forest": _fit_random_forest,
    "levelwise_gbt": _fit_boosted,
    "leafwise_gbt": _fit_boosted,
    "cyclic_gam": _fit_cyclic_gam,
}


def fit(config: ModelConfig, train: FeatureTable) -> TrainedEnsemble:
    """Fit ``config`` on ``train``; deterministic for a fixed ``config.seed``."""
    P = _Prepared(config, train)
    model = _FITTERS[config.family](config, P)
    model.feature_names = tuple(train.names)
    return model
