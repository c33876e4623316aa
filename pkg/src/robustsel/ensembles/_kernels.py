"""njitted tree growing and traversal.

All families share one grower working on a binned uint8 matrix. A node
split sends a row left when its bin is <= the split bin. Per-row inputs are
``g`` (gradient, or positive weight for Gini), ``h`` (hessian, or total
weight for Gini) and ``cnt`` (sample count used by the leaf minimum).
"""
import numpy as np
from numba import njit

GINI = 0
NEWTON = 1

_MIN_GAIN_EPS = 1e-12


@njit(cache=True, nogil=True)
def _gini_score(G, H):
    # H * gini impurity for a node with positive weight G out of H
    if H <= 0.0:
        return 0.0
    return 2.0 * G * (H - G) / H


@njit(cache=True, nogil=True)
def _newton_score(G, H, lam):
    return G * G / (H + lam)


@njit(cache=True, nogil=True)
def _best_split(Xb, idx, s, e, g, h, cnt, n_bins, feats, criterion,
                min_leaf, min_child_weight, min_gain, lam,
                hist_g, hist_h, hist_c):
    """Best (gain, feature, bin) for rows idx[s:e] over candidate ``feats``."""
    k = feats.shape[0]
    for fi in range(k):
        nb = n_bins[feats[fi]]
        for b in range(nb):
            hist_g[fi, b] = 0.0
            hist_h[fi, b] = 0.0
            hist_c[fi, b] = 0.0
    G = 0.0
    H = 0.0
    C = 0.0
    for p in range(s, e):
        r = idx[p]
        gr = g[r]
        hr = h[r]
        cr = cnt[r]
        G += gr
        H += hr
        C += cr
        for fi in range(k):
            b = Xb[r, feats[fi]]
            hist_g[fi, b] += gr
            hist_h[fi, b] += hr
            hist_c[fi, b] += cr

    if criterion == GINI:
        parent = _gini_score(G, H)
    else:
        parent = _newton_score(G, H, lam)

    best_gain = -1.0
    best_f = -1
    best_b = -1
    for fi in range(k):
        nb = n_bins[feats[fi]]
        GL = 0.0
        HL = 0.0
        CL = 0.0
        for b in range(nb - 1):
            GL += hist_g[fi, b]
            HL += hist_h[fi, b]
            CL += hist_c[fi, b]
            CR = C - CL
            if CL < min_leaf:
                continue
            if CR < min_leaf:
                break
            GR = G - GL
            HR = H - HL
            if criterion == GINI:
                gain = parent - _gini_score(GL, HL) - _gini_score(GR, HR)
            else:
                if HL < min_child_weight or HR < min_child_weight:
                    continue
                gain = 0.5 * (_newton_score(GL, HL, lam) + _newton_score(GR, HR, lam) - parent)
            if gain > best_gain:
                best_gain = gain
                best_f = feats[fi]
                best_b = b
    if best_f < 0 or best_gain <= _MIN_GAIN_EPS or best_gain < min_gain:
        return -1.0, -1, -1, G, H, C
    return best_gain, best_f, best_b, G, H, C


@njit(cache=True, nogil=True)
def _sample_features(allowed, max_features, out):
    k = allowed.shape[0]
    pool = allowed.copy()
    for i in range(max_features):
        j = i + np.random.randint(0, k - i)
        tmp = pool[i]
        pool[i] = pool[j]
        pool[j] = tmp
        out[i] = pool[i]


@njit(cache=True, nogil=True)
def grow_tree(Xb, rows, g, h, cnt, n_bins, allowed, max_features, criterion,
              max_depth, max_leaves, min_leaf, min_child_weight, min_gain, lam, seed):
    """Grow one tree over ``rows``.

    ``max_features`` > 0 draws that many candidate features per node from
    ``allowed``; otherwise all of ``allowed`` is searched. ``max_depth`` < 0
    means unlimited depth; ``max_leaves`` > 0 switches to best-first
    expansion with that leaf budget, otherwise every valid split is taken.

    Returns flat node arrays (feature, bin, left, right, G, H, C, gain, depth).
    """
    np.random.seed(seed)
    m = rows.shape[0]
    cap = 2 * m + 1
    if max_leaves > 0 and 2 * max_leaves < cap:
        cap = 2 * max_leaves
    if 0 <= max_depth < 30 and 2 ** (max_depth + 1) < cap:
        cap = 2 ** (max_depth + 1)
    feature = np.full(cap, -1, dtype=np.int64)
    split_bin = np.full(cap, -1, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    sum_g = np.zeros(cap)
    sum_h = np.zeros(cap)
    sum_c = np.zeros(cap)
    gain = np.zeros(cap)
    depth = np.zeros(cap, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    end = np.zeros(cap, dtype=np.int64)
    cand_gain = np.full(cap, -1.0)
    cand_f = np.full(cap, -1, dtype=np.int64)
    cand_b = np.full(cap, -1, dtype=np.int64)

    idx = rows.copy()
    k_all = allowed.shape[0]
    k = k_all if (max_features <= 0 or max_features >= k_all) else max_features
    feats = np.empty(k, dtype=np.int64)
    nb_max = 1
    for j in range(n_bins.shape[0]):
        if n_bins[j] > nb_max:
            nb_max = n_bins[j]
    hist_g = np.zeros((k, nb_max))
    hist_h = np.zeros((k, nb_max))
    hist_c = np.zeros((k, nb_max))

    frontier = np.empty(cap, dtype=np.int64)
    n_front = 0

    start[0] = 0
    end[0] = m
    if k == k_all:
        feats[:] = allowed
    else:
        _sample_features(allowed, k, feats)
    bg, bf, bb, G, H, C = _best_split(Xb, idx, 0, m, g, h, cnt, n_bins, feats, criterion,
                                      min_leaf, min_child_weight, min_gain, lam,
                                      hist_g, hist_h, hist_c)
    sum_g[0] = G
    sum_h[0] = H
    sum_c[0] = C
    if max_depth != 0 and bf >= 0:
        cand_gain[0] = bg
        cand_f[0] = bf
        cand_b[0] = bb
        frontier[0] = 0
        n_front = 1
    n_nodes = 1
    n_leaves = 1

    while n_front > 0:
        if max_leaves > 0:
            if n_leaves >= max_leaves:
                break
            pos = 0
            for q in range(1, n_front):
                if cand_gain[frontier[q]] > cand_gain[frontier[pos]]:
                    pos = q
        else:
            pos = n_front - 1
        node = frontier[pos]
        frontier[pos] = frontier[n_front - 1]
        n_front -= 1

        f = cand_f[node]
        b = cand_b[node]
        s = start[node]
        e = end[node]
        # stable in-place partition of idx[s:e]
        tmp = idx[s:e].copy()
        lo = s
        for p in range(tmp.shape[0]):
            if Xb[tmp[p], f] <= b:
                idx[lo] = tmp[p]
                lo += 1
        hi = lo
        for p in range(tmp.shape[0]):
            if Xb[tmp[p], f] > b:
                idx[hi] = tmp[p]
                hi += 1

        feature[node] = f
        split_bin[node] = b
        gain[node] = cand_gain[node]
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        n_leaves += 1
        left[node] = lc
        right[node] = rc
        start[lc] = s
        end[lc] = lo
        start[rc] = lo
        end[rc] = e
        for child in (lc, rc):
            depth[child] = depth[node] + 1
            if k != k_all:
                _sample_features(allowed, k, feats)
            bg, bf, bb, G, H, C = _best_split(Xb, idx, start[child], end[child], g, h, cnt,
                                              n_bins, feats, criterion, min_leaf,
                                              min_child_weight, min_gain, lam,
                                              hist_g, hist_h, hist_c)
            sum_g[child] = G
            sum_h[child] = H
            sum_c[child] = C
            if bf >= 0 and (max_depth < 0 or depth[child] < max_depth):
                cand_gain[child] = bg
                cand_f[child] = bf
                cand_b[child] = bb
                frontier[n_front] = child
                n_front += 1

    return (feature[:n_nodes].copy(), split_bin[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), sum_g[:n_nodes].copy(), sum_h[:n_nodes].copy(),
            sum_c[:n_nodes].copy(), gain[:n_nodes].copy(), depth[:n_nodes].copy())


@njit(cache=True, nogil=True)
def tree_predict_binned(Xb, feature, split_bin, left, right, value):
    n = Xb.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if Xb[i, feature[node]] <= split_bin[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True, nogil=True)
def ensemble_sum(X, feature, threshold, left, right, value, roots, n_trees):
    """Sum of the first ``n_trees`` tree outputs per row, in tree order."""
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            node = roots[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc
    return out
