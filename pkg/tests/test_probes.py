import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from awesim.probes import (LabeledEmbeddingSet, ProbeError, fit_logistic, mean_se,
                           permutation_test, stratified_split, train_language_probe)


def two_blobs(n, gap, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2 * n, dim))
    x[:n, 0] += gap
    x[n:, 0] -= gap
    return x, ["A"] * n + ["B"] * n


def test_separable_probe():
    x, y = two_blobs(500, 6.0)
    res = train_language_probe(LabeledEmbeddingSet(x, y))
    assert res.accuracy >= 99.0
    assert res.n_train == 800 and res.n_test == 200
    assert res.classes == ("A", "B")


def test_shuffled_labels_at_chance():
    x, y = two_blobs(5000, 6.0, dim=4)
    rng = np.random.default_rng(1)
    y = [y[i] for i in rng.permutation(len(y))]
    res = train_language_probe(LabeledEmbeddingSet(x, y))
    assert abs(res.accuracy - 50.0) <= 3.0


def test_rotation_invariance_without_penalty():
    x, y = two_blobs(200, 1.0, dim=5, seed=3)
    q, _ = np.linalg.qr(np.random.default_rng(4).standard_normal((5, 5)))
    a = train_language_probe(LabeledEmbeddingSet(x, y), l2=0.0)
    b = train_language_probe(LabeledEmbeddingSet(x @ q, y), l2=0.0)
    assert a.accuracy == b.accuracy


def test_logistic_matches_known_optimum():
    # one feature, symmetric data: optimum has zero bias and the weight solving
    # the first-order condition, checked by a vanishing gradient
    x = np.array([[-2.0], [-1.0], [1.0], [2.0], [-0.5], [0.5]])
    y = np.array([0, 0, 1, 1, 1, 0], dtype=float)
    w, b, _ = fit_logistic(x, y, l2=1e-2)
    p = 1 / (1 + np.exp(-(x @ w + b)))
    grad_w = x.T @ (p - y) / len(y) + 1e-2 * w
    grad_b = np.mean(p - y)
    assert abs(b) < 1e-6
    assert np.linalg.norm(grad_w) < 1e-5 and abs(grad_b) < 1e-5


def test_probe_label_errors():
    x = np.zeros((30, 2))
    with pytest.raises(ProbeError, match="exactly 2"):
        train_language_probe(LabeledEmbeddingSet(x, ["A"] * 30))
    with pytest.raises(ProbeError, match="at least 10"):
        train_language_probe(LabeledEmbeddingSet(x, ["A"] * 25 + ["B"] * 5))
    with pytest.raises(ProbeError, match="labels"):
        LabeledEmbeddingSet(x, ["A"] * 3)


@settings(max_examples=40)
@given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 1000))
def test_stratified_split_proportions(na, nb, seed):
    labels = ["A"] * na + ["B"] * nb
    train, test = stratified_split(labels, 0.2, seed)
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(na + nb))
    for lab, n in (("A", na), ("B", nb)):
        k = sum(labels[i] == lab for i in test)
        assert abs(k - 0.2 * n) <= 1


def test_split_seed_changes_split():
    labels = ["A"] * 50 + ["B"] * 50
    assert not np.array_equal(stratified_split(labels, 0.2, 0)[1],
                              stratified_split(labels, 0.2, 1)[1])


# -- mean and standard error ------------------------------------------------

def test_mean_se_small_cases():
    out = mean_se({"a": [2, 4], "b": [5]})
    assert out["a"] == pytest.approx((3.0, 1.0))
    assert out["b"] == (5.0, 0.0)


def test_mean_se_formula():
    v = np.random.default_rng(0).standard_normal(20)
    m = sum(v) / 20
    sd = (sum((x - m) ** 2 for x in v) / 19) ** 0.5
    assert mean_se({"k": v})["k"] == pytest.approx((m, sd / 20 ** 0.5), rel=1e-12)


def test_mean_se_empty_group():
    with pytest.raises(ProbeError):
        mean_se({"k": []})


# -- permutation test -------------------------------------------------------

def brute_force_p(a, b):
    pooled = list(a) + list(b)
    obs = abs(np.mean(a) - np.mean(b))
    hits = total = 0
    for idx in itertools.combinations(range(len(pooled)), len(a)):
        ga = [pooled[i] for i in idx]
        gb = [pooled[i] for i in range(len(pooled)) if i not in idx]
        total += 1
        hits += abs(np.mean(ga) - np.mean(gb)) >= obs - 1e-12
    return hits / total


@pytest.mark.parametrize("a,b", [([1, 2, 3], [4, 5, 6]), ([1.5, 0.2, 3.3], [2.0, 2.0, 7.1]),
                                 ([0, 0, 1], [0, 1, 1])])
def test_exact_enumeration_three_vs_three(a, b):
    res = permutation_test(a, b, n_perm=1000)
    assert res.exact
    assert res.n_perm == 20
    assert res.p_value == pytest.approx(brute_force_p(a, b), abs=1e-12)


def test_clear_separation():
    res = permutation_test([0] * 5, [9] * 5, n_perm=10_000, exact=False)
    assert res.p_value <= 0.01


def test_identical_groups():
    res = permutation_test([1, 2, 3, 4, 5], [1, 2, 3, 4, 5], n_perm=2000, exact=False)
    assert res.p_value > 0.5


def test_degenerate_constant_input():
    res = permutation_test([3, 3], [3, 3, 3])
    assert res.degenerate and res.p_value == 1.0


def test_permutation_argument_errors():
    with pytest.raises(ProbeError):
        permutation_test([], [1], n_perm=1000)
    with pytest.raises(ProbeError, match="at least 1000"):
        permutation_test([1], [2], n_perm=10)


def test_monte_carlo_seeded():
    a, b = [0.1, 0.5, 0.9, 1.3], [0.4, 1.1, 1.2, 2.0, 0.3]
    one = permutation_test(a, b, n_perm=5000, seed=7, exact=False)
    two = permutation_test(a, b, n_perm=5000, seed=7, exact=False)
    assert one == two
    assert one.p_value == pytest.approx(brute_force_p(a, b), abs=0.03)


def test_null_rejection_rate():
    rng = np.random.default_rng(12)
    rejections = 0
    for rep in range(200):
        a, b = rng.standard_normal(8), rng.standard_normal(8)
        rejections += permutation_test(a, b, n_perm=1000, seed=rep, exact=False).p_value < 0.05
    assert 0.01 <= rejections / 200 <= 0.10
