"""Language-identity probe and result aggregation statistics."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from math import comb

import numpy as np

log = logging.getLogger(__name__)


class ProbeError(ValueError):
    pass


@dataclass
class LabeledEmbeddingSet:
    embeddings: np.ndarray
    labels: list
    split_seed: int = 0

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = list(self.labels)
        if len(self.embeddings) != len(self.labels):
            raise ProbeError(
                f"{len(self.embeddings)} embeddings but {len(self.labels)} labels")


@dataclass
class ProbeResult:
    accuracy: float
    n_train: int
    n_test: int
    weights: np.ndarray | None = None
    bias: float = 0.0
    classes: tuple = ()
    iterations: int = 0

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "n_train": self.n_train, "n_test": self.n_test,
                "classes": list(self.classes), "iterations": self.iterations}


def stratified_split(labels, test_fraction: float, seed):
    """Indices (train, test) with each label's share of the test set rounded."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    train, test = [], []
    for lab in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(test_fraction * len(idx)))
        test.extend(idx[:k].tolist())
        train.extend(idx[k:].tolist())
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def fit_logistic(X, y, l2: float = 1e-4, tol: float = 1e-6, max_iter: int = 10_000):
    """Binary logistic regression by full-batch gradient descent.

    Minimizes mean log-loss + ``l2``/2 * ||w||^2 (bias unpenalized) with a
    fixed step of 1/L, L the Lipschitz bound of the gradient. Stops when
    the gradient norm drops below ``tol`` or after ``max_iter`` steps.
    Returns ``(w, b, iterations)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, dim = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    lip = 0.25 * np.linalg.norm(Xb, 2) ** 2 / n + l2
    step = 1.0 / lip
    theta = np.zeros(dim + 1)
    reg = np.full(dim + 1, l2)
    reg[-1] = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        p = 0.5 * (1.0 + np.tanh(0.5 * (Xb @ theta)))
        grad = Xb.T @ (p - y) / n + reg * theta
        if np.linalg.norm(grad) < tol:
            break
        theta -= step * grad
    return theta[:-1], float(theta[-1]), it


def train_language_probe(s: LabeledEmbeddingSet, l2: float = 1e-4, test_fraction: float = 0.2,
                         min_per_label: int = 10) -> ProbeResult:
    """Fit a binary language classifier on a stratified 80% and score the rest."""
    classes = tuple(sorted(set(s.labels)))
    if len(classes) != 2:
        raise ProbeError(f"probe needs exactly 2 labels, got {list(classes)}")
    counts = {c: s.labels.count(c) for c in classes}
    short = {c: k for c, k in counts.items() if k < min_per_label}
    if short:
        raise ProbeError(f"need at least {min_per_label} samples per label, got {short}")
    y = np.array([classes.index(lab) for lab in s.labels], dtype=np.float64)
    train, test = stratified_split(s.labels, test_fraction, s.split_seed)
    w, b, it = fit_logistic(s.embeddings[train], y[train], l2=l2)
    pred = (s.embeddings[test] @ w + b) > 0
    acc = 100.0 * float(np.mean(pred == (y[test] > 0.5)))
    return ProbeResult(acc, len(train), len(test), w, b, classes, it)


# -- aggregation ------------------------------------------------------------

def mean_se(groups: dict) -> dict:
    """Per-group ``(mean, standard error)`` with SE = sample sd / sqrt(n)."""
    out = {}
    for key, values in groups.items():
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            raise ProbeError(f"group {key!r} is empty")
        se = 0.0 if v.size == 1 else float(np.std(v, ddof=1) / np.sqrt(v.size))
        out[key] = (float(v.mean()), se)
    return out


@dataclass(frozen=True)
class PermutationResult:
    p_value: float
    observed: float
    n_perm: int
    exact: bool = False
    degenerate: bool = False


def permutation_test(group_a, group_b, n_perm: int = 10_000, seed=0,
                     exact: bool | None = None) -> PermutationResult:
    """Two-sided permutation test on the difference in means.

    When ``exact`` (default: whenever the number of distinct splits does
    not exceed ``n_perm``) every split is enumerated and p is the share of
    splits at least as extreme as the observed one. Otherwise p uses random
    relabelings with add-one smoothing: (1 + #extreme) / (n_perm + 1).
    """
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ProbeError("both groups must be non-empty")
    if n_perm < 1000:
        raise ProbeError(f"n_perm must be at least 1000, got {n_perm}")
    pooled = np.concatenate([a, b])
    observed = float(a.mean() - b.mean())
    if np.all(pooled == pooled[0]):
        return PermutationResult(1.0, 0.0, 0, degenerate=True)
    n, na = pooled.size, a.size
    total = pooled.sum()
    # relative slack absorbs summation-order rounding in equal-valued splits
    thresh = abs(observed) * (1.0 - 1e-12) - 1e-15

    def diffs(sum_a):
        return sum_a / na - (total - sum_a) / (n - na)

    if exact is None:
        exact = comb(n, na) <= n_perm
    if exact:
        sums = np.array([pooled[list(c)].sum() for c in itertools.combinations(range(n), na)])
        d = np.abs(diffs(sums))
        return PermutationResult(float(np.mean(d >= thresh)), observed, len(sums), exact=True)
    rng = np.random.default_rng(seed)
    extreme = 0
    done = 0
    while done < n_perm:
        k = min(4096, n_perm - done)
        keys = rng.random((k, n))
        idx = np.argpartition(keys, na - 1, axis=1)[:, :na] if na < n else np.tile(np.arange(n), (k, 1))
        d = np.abs(diffs(pooled[idx].sum(axis=1)))
        extreme += int(np.sum(d >= thresh))
        done += k
    return PermutationResult((1 + extreme) / (n_perm + 1), observed, n_perm)
