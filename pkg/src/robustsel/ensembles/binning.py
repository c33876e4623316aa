from __future__ import annotations

import numpy as np


def build_histogram_bins(column: np.ndarray, max_bins: int = 256) -> np.ndarray:
    """Cut points splitting ``column`` into at most ``max_bins`` bins.

    A value ``x`` falls in bin ``searchsorted(edges, x, side="left")``, so bin
    ``b`` holds ``edges[b-1] < x <= edges[b]``. Columns with few distinct
    values cut halfway between neighbours; others cut at equal-count
    quantiles. The result is strictly increasing and every bin is occupied.
    """
    if max_bins < 2:
        raise ValueError("max_bins must be at least 2")
    col = np.asarray(column, dtype=np.float64)
    col = col[np.isfinite(col)]
    if col.size == 0:
        return np.empty(0)
    distinct = np.unique(col)
    if distinct.size <= max_bins:
        lo, hi = distinct[:-1], distinct[1:]
        cuts = lo + (hi - lo) / 2.0
        # midpoint can round up onto the upper neighbour
        return np.where(cuts >= hi, lo, cuts)
    qs = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
    cuts = np.unique(np.quantile(col, qs))
    return cuts[cuts < distinct[-1]]


def bin_column(column: np.ndarray, edges: np.ndarray) -> np.ndarray:
    return np.searchsorted(edges, column, side="left").astype(np.uint8)


def bin_matrix(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    Xb = np.empty(X.shape, dtype=np.uint8)
    for j, e in enumerate(edges):
        Xb[:, j] = bin_column(X[:, j], e)
    return Xb
