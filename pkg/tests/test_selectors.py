import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import digamma

from robustsel.errors import DataError, DegenerateError
from robustsel.flowdata import synthesize
from robustsel.selectors import (
    METHODS,
    ContingencyCounts,
    RawScoreVector,
    am_gm_ratio,
    binarize_for_chi2,
    chi_squared,
    discrete_info_gain,
    dispersion_ratio,
    entropy,
    info_gain,
    knn_info_gain,
    mad,
    rfe_elimination_order,
    rfe_rank,
    rfe_scores_from_order,
    score_all,
)
from conftest import make_table


# -- independent oracles --------------------------------------------------------

def chi2_oracle(P, Q, M, N):
    """Classical sum of (O - E)^2 / E over the 2x2 table."""
    obs = [[P, Q], [M, N]]
    total = P + Q + M + N
    rows = [P + Q, M + N]
    cols = [P + M, Q + N]
    stat = 0.0
    for i in range(2):
        for j in range(2):
            e = rows[i] * cols[j] / total
            stat += (obs[i][j] - e) ** 2 / e
    return stat


def mad_oracle(xs):
    lo, hi = min(xs), max(xs)
    s = [0.0 if hi == lo else (x - lo) / (hi - lo) for x in xs]
    m = math.fsum(s) / len(s)
    return math.fsum(abs(v - m) for v in s) / len(s)


def dr_oracle(xs):
    lo = min(xs)
    sh = [x - lo + 1.0 for x in xs]
    am = math.fsum(sh) / len(sh)
    gm = math.exp(math.fsum(math.log(v) for v in sh) / len(sh))
    return am / gm


def ig_oracle(x, y):
    n = len(y)
    joint = Counter(zip(x, y))
    px = Counter(x)
    py = Counter(y)
    h_y = -sum(c / n * math.log(c / n) for c in py.values())
    h_y_given_x = -sum(c / n * math.log(c / px[xv]) for (xv, _), c in joint.items())
    return h_y - h_y_given_x


def knn_mi_bruteforce(x, y, k):
    """Mixed continuous/discrete kNN MI by explicit pairwise distances."""
    n = len(x)
    d = np.abs(x[:, None] - x[None, :])
    total = 0.0
    for i in range(n):
        same = np.flatnonzero(y == y[i])
        n_c = same.size
        kc = min(k, n_c - 1)
        r = np.sort(d[i, same])[kc]
        r = np.nextafter(r, 0)
        m = int(np.sum(d[i] <= r))
        total += digamma(n) + digamma(kc) - digamma(n_c) - digamma(m)
    return max(0.0, total / n)


# -- entropy / information gain ----------------------------------------------------

def test_entropy_examples():
    assert entropy(np.array([1, 1, 1])) == 0.0
    assert entropy(np.array([0, 1] * 5)) == pytest.approx(math.log(2), abs=1e-12)
    assert entropy(np.array([1, 0, 0, 0])) == pytest.approx(
        -(0.25 * math.log(0.25) + 0.75 * math.log(0.75)), abs=1e-12)
    assert round(entropy(np.array([1, 0, 0, 0])), 4) == 0.5623


def test_info_gain_identity_feature_is_ln2():
    y = np.array([0, 1] * 50)
    assert info_gain(y.astype(float), y, kind="flag") == pytest.approx(math.log(2), abs=1e-12)


def test_info_gain_constant_is_zero():
    assert info_gain(np.full(10, 3.0), np.array([0, 1] * 5)) == 0.0


def test_info_gain_length_mismatch():
    with pytest.raises(ValueError):
        info_gain(np.zeros(3), np.zeros(4))


def test_info_gain_continuous_near_ln2():
    rng = np.random.default_rng(0)
    y = np.array([0, 1] * 1000)
    x = y + 1e-6 * rng.standard_normal(y.size)
    got = info_gain(x, y, kind="continuous", rng=np.random.default_rng(1))
    assert abs(got - math.log(2)) <= 0.1 * math.log(2)


def test_knn_matches_bruteforce_oracle():
    rng = np.random.default_rng(3)
    y = (rng.random(300) < 0.4).astype(int)
    x = rng.standard_normal(300) + 1.5 * y
    got = knn_info_gain(x, y, k=3, rng=np.random.default_rng(9))
    # replay the estimator's preprocessing, then count neighbours pairwise
    xs = x / x.std()
    jitter = np.random.default_rng(9).standard_normal(300)
    xs = xs + 1e-10 * max(1.0, float(np.mean(np.abs(xs)))) * jitter
    assert got == pytest.approx(knn_mi_bruteforce(xs, y, 3), abs=1e-9)
    assert got > 0.1


def test_knn_independent_feature_is_small():
    rng = np.random.default_rng(4)
    y = (rng.random(2000) < 0.5).astype(int)
    assert knn_info_gain(rng.standard_normal(2000), y) < 0.02


@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 1)), min_size=2, max_size=80))
def test_discrete_info_gain_matches_joint_frequency_oracle(pairs):
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs])
    expected = max(0.0, ig_oracle(x.tolist(), y.tolist()))
    assert discrete_info_gain(x, y) == pytest.approx(expected, abs=1e-9)
    if np.unique(x).size > 1:
        assert info_gain(x, y, kind="integer") == pytest.approx(expected, abs=1e-9)


# -- chi-squared --------------------------------------------------------------------

def test_chi_squared_examples():
    assert chi_squared(ContingencyCounts(2, 2, 3, 3)) == 0.0
    assert chi_squared(ContingencyCounts(4, 1, 1, 4)) == pytest.approx(3.6, abs=1e-12)
    assert chi_squared(ContingencyCounts(5, 0, 0, 5)) == pytest.approx(10.0, abs=1e-12)


def test_chi_squared_zero_marginal():
    with pytest.raises(DegenerateError):
        chi_squared(ContingencyCounts(3, 2, 0, 0))


@given(st.tuples(*[st.integers(1, 500)] * 4))
def test_chi_squared_oracle_and_class_symmetry(c):
    P, Q, M, N = c
    got = chi_squared(ContingencyCounts(P, Q, M, N))
    assert got == pytest.approx(chi2_oracle(P, Q, M, N), rel=1e-9, abs=1e-9)
    assert got == pytest.approx(chi_squared(ContingencyCounts(Q, P, N, M)), rel=1e-12)


def test_binarize_examples():
    np.testing.assert_array_equal(binarize_for_chi2(np.array([0, 0, 5, 9])),
                                  [False, False, True, True])
    np.testing.assert_array_equal(binarize_for_chi2(np.array([1, 2, 3])), [False, False, True])
    assert not binarize_for_chi2(np.full(4, 2.0)).any()


def test_contingency_from_vectors():
    c = ContingencyCounts.from_vectors(np.array([1, 1, 0, 0, 1]), np.array([1, 0, 1, 0, 1]))
    assert (c.P, c.Q, c.M, c.N, c.S) == (2, 1, 1, 1, 5)


# -- MAD / dispersion ratio ---------------------------------------------------------

def test_mad_examples():
    assert mad(np.full(5, 2.0)) == 0.0
    assert mad(np.array([1.0, 2, 3, 4])) == pytest.approx(1 / 3, abs=1e-12)
    assert mad(np.array([0.0, 10.0])) == pytest.approx(0.5, abs=1e-12)


def test_dispersion_ratio_examples():
    assert dispersion_ratio(np.full(3, 7.0)) == 1.0
    assert am_gm_ratio(np.array([2.0, 8.0])) == pytest.approx(1.25, abs=1e-12)
    # x - min + 1 = [1, 1, 8]
    assert dispersion_ratio(np.array([0.0, 0.0, 7.0])) == pytest.approx(5 / 3, abs=1e-12)


columns = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=60)


@given(columns, st.randoms(use_true_random=False))
def test_mad_dr_oracles_and_permutation_invariance(xs, rnd):
    x = np.array(xs)
    assert mad(x) == pytest.approx(mad_oracle(xs), abs=1e-12)
    dr = dispersion_ratio(x)
    assert dr >= 1.0
    assert dr == pytest.approx(max(1.0, dr_oracle(xs)), abs=1e-12)
    perm = list(xs)
    rnd.shuffle(perm)
    assert mad(np.array(perm)) == pytest.approx(mad(x), abs=1e-12)
    assert dispersion_ratio(np.array(perm)) == pytest.approx(dr, abs=1e-12)


# -- RFE --------------------------------------------------------------------------

def test_rfe_two_feature_scores():
    np.testing.assert_allclose(rfe_scores_from_order([1, 0], 2), [2 / 3, 1 / 3])


def test_rfe_single_feature_errors():
    with pytest.raises(DataError):
        rfe_rank(make_table(np.arange(10.0), [0, 1] * 5))


def test_rfe_finds_informative_feature():
    t = synthesize(600, 1, 3, 0.3, seed=11)
    inf = t.names.index(t.metadata["informative"][0])
    s = rfe_rank(t, seed=0)
    assert int(np.argmax(s.scores)) == inf
    assert s.scores.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.unique(s.scores).size == t.n_features and (s.scores > 0).all()


def test_rfe_degenerate_learner_eliminates_lowest_index(caplog):
    t = make_table(np.random.default_rng(0).normal(size=(20, 3)), [0, 1] * 10)
    order = rfe_elimination_order(t, lambda sub: np.zeros(sub.n_features))
    assert order == [0, 1, 2]
    assert "zero importance" in caplog.text


def test_rfe_callable_learner_ranks_by_importance():
    t = make_table(np.random.default_rng(0).normal(size=(20, 4)), [0, 1] * 10)
    weights = {"f0": 3.0, "f1": 1.0, "f2": 4.0, "f3": 2.0}
    s = rfe_rank(t, lambda sub: np.array([weights[n] for n in sub.names]))
    # elimination f1, f3, f0, f2 -> ranks 4, 3, 2, 1 -> scores (d - r + 1) / 10
    np.testing.assert_allclose(s.scores, [0.3, 0.1, 0.4, 0.2])


# -- dispatch -------------------------------------------------------------------------

def test_score_all_mad_matches_per_feature_oracle():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 3)) * [1, 10, 100]
    t = make_table(X, [0, 1] * 20)
    s = score_all(t, "mad")
    np.testing.assert_allclose(s.scores, [mad_oracle(X[:, j].tolist()) for j in range(3)],
                               atol=1e-12)


@pytest.mark.parametrize("method", [m for m in METHODS if m != "rfe"])
def test_score_all_constant_table_scores_zero(method):
    t = make_table(np.ones((10, 3)), [0, 1] * 5)
    assert (score_all(t, method).scores == 0).all()


def test_score_all_rfe_on_constant_table_is_uniformly_ranked():
    t = make_table(np.ones((10, 3)), [0, 1] * 5)
    s = score_all(t, "rfe")
    assert s.scores.sum() == pytest.approx(1.0)


def test_score_all_info_gain_deterministic():
    t = synthesize(400, 2, 3, 0.3, seed=2)
    a, b = score_all(t, "info_gain", seed=4), score_all(t, "info_gain", seed=4)
    assert a.scores.tobytes() == b.scores.tobytes()


def test_score_all_unknown_method():
    with pytest.raises(ValueError):
        score_all(make_table(np.ones(4), [0, 1, 0, 1]), "anova")


def test_raw_score_vector_json_round_trip(tmp_path):
    v = RawScoreVector("mad", ("a", "b"), np.array([0.25, 0.5]))
    v.save(tmp_path / "v.json")
    back = RawScoreVector.load(tmp_path / "v.json")
    assert back.names == v.names and back.scores.tolist() == [0.25, 0.5]
    assert json.loads((tmp_path / "v.json").read_text())["method"] == "mad"


def test_raw_score_vector_rejects_negative():
    with pytest.raises(ValueError):
        RawScoreVector("x", ("a",), np.array([-1.0]))
