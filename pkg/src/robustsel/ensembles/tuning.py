"""Exhaustive grid search scored by stratified k-fold F1."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from robustsel.errors import DataError
from robustsel.flowdata import FeatureTable, stratified_kfold
from robustsel.ensembles.config import ModelConfig, expand_grid
from robustsel.ensembles.model import fit, predict

logger = logging.getLogger(__name__)


def f1_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def cv_scores(config: ModelConfig, train: FeatureTable, n_splits: int = 5, seed: int = 0
              ) -> list[float]:
    scores = []
    for k, (tr, va) in enumerate(stratified_kfold(train.labels, n_splits, seed)):
        fold_train, fold_val = train.take(tr), train.take(va)
        if not 0 < fold_train.n_malicious < fold_train.n_rows:
            raise DataError(f"fold {k} training part has a single class")
        model = fit(config, fold_train)
        scores.append(f1_score(fold_val.labels, predict(model, fold_val)))
    return scores


def _size_key(c: ModelConfig) -> tuple:
    if c.family in ("leafwise_gbt", "cyclic_gam"):
        size = c.max_leaves if c.max_leaves is not None else 0
    else:
        size = c.max_depth if c.max_depth is not None and c.max_depth >= 0 else 10**6
    return (size, c.learning_rate or 0.0)


def tune(family: str, train: FeatureTable, grid: dict[str, list] | None = None, seed: int = 0,
         n_splits: int = 5, jobs: int = 1, base: dict | None = None) -> ModelConfig:
    """Return the grid configuration with the highest mean k-fold F1.

    Ties prefer the smaller tree size (depth or leaves), then the lower
    learning rate, then earlier grid order.
    """
    candidates = expand_grid(family, grid, seed=seed, **(base or {}))
    if not candidates:
        raise ValueError("empty grid")
    if len(candidates) == 1:
        return candidates[0]

    def score(c: ModelConfig) -> float:
        return float(np.mean(cv_scores(c, train, n_splits, seed)))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            means = list(pool.map(score, candidates))
    else:
        means = [score(c) for c in candidates]
    order = sorted(range(len(candidates)),
                   key=lambda i: (-means[i], *_size_key(candidates[i]), i))
    best = candidates[order[0]]
    logger.info("tune %s: best mean F1 %.4f with %s", family, means[order[0]], best.to_dict())
    return best
