"""Isolation forest built from scratch.

Each tree is grown on a uniform subsample of ``min(psi, n)`` rows.  A node
splits on a uniformly chosen column (among those that still vary inside the
node) at a uniform point of that column's range; growth stops at height
``ceil(log2(psi))`` or when a node holds a single row.  Anomaly score is
``2 ** (-E[h(x)] / c(psi))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma

from ..errors import InsufficientRowsError, ValidationError

EULER_GAMMA = 0.5772156649015329


def harmonic(n):
    """Exact harmonic number H(n) for real n >= 1 via the digamma function."""
    return digamma(np.asarray(n, dtype=np.float64) + 1.0) + EULER_GAMMA


def average_path_length(n):
    """c(n) = 2 H(n-1) - 2 (n-1) / n, with c(0) = c(1) = 0."""
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    big = n > 1
    m = n[big]
    out[big] = 2.0 * harmonic(m - 1.0) - 2.0 * (m - 1.0) / m
    return out if out.ndim else float(out)


def score_from_path_length(mean_path, n):
    return np.power(2.0, -np.asarray(mean_path, dtype=np.float64) / average_path_length(n))


@dataclass
class IsolationTree:
    # parallel node arrays; leaves have feature == -1
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    @property
    def height(self) -> int:
        return int(self.depth.max())

    def leaf_path_lengths(self, X):
        """Path length h(x) for every row of X: depth reached plus c(leaf size)."""
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while np.any(active):
            idx = np.flatnonzero(active)
            n = node[idx]
            go_left = X[idx, self.feature[n]] < self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active[idx] = self.feature[node[idx]] >= 0
        return self.depth[node] + average_path_length(self.size[node])


def _grow(X, rng, height_limit):
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(n, d):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(n)
        depth.append(d)
        return len(feature) - 1

    stack = [(np.arange(len(X)), 0, new_node(len(X), 0))]
    while stack:
        rows, d, node = stack.pop()
        if d >= height_limit or len(rows) <= 1:
            continue
        sub = X[rows]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        varying = np.flatnonzero(hi > lo)
        if len(varying) == 0:
            continue
        q = int(varying[rng.integers(len(varying))])
        p = rng.uniform(lo[q], hi[q])
        if p <= lo[q]:
            # measure-zero draw; keep both children non-empty
            p = np.nextafter(lo[q], hi[q])
        go_left = sub[:, q] < p
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node] = q
        threshold[node] = p
        ln = new_node(len(lrows), d + 1)
        rn = new_node(len(rrows), d + 1)
        left[node] = ln
        right[node] = rn
        stack.append((rrows, d + 1, rn))
        stack.append((lrows, d + 1, ln))

    return IsolationTree(np.asarray(feature, dtype=np.int64), np.asarray(threshold),
                         np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
                         np.asarray(size, dtype=np.int64), np.asarray(depth, dtype=np.int64))


@dataclass
class IsolationForestModel:
    trees: list
    n_features: int
    subsample_size: int
    tree_count: int
    seed: int
    threshold: float = 0.5

    @property
    def height_limit(self) -> int:
        return int(math.ceil(math.log2(self.subsample_size)))

    def path_lengths(self, X) -> np.ndarray:
        """Per-tree path lengths, shape ``(n_trees, n_rows)``."""
        X = _as_matrix(X, self.n_features)
        return np.stack([t.leaf_path_lengths(X) for t in self.trees])

    def score(self, X) -> np.ndarray:
        return score_from_path_length(self.path_lengths(X).mean(axis=0), self.subsample_size)

    def predict(self, X) -> np.ndarray:
        """True where the row is anomalous (score above the 0.5 cut)."""
        return self.score(X) > self.threshold


def _as_matrix(X, n_features=None):
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None] if n_features in (None, 1) else X[None, :]
    if X.ndim != 2:
        raise ValidationError("expected a 2-D array of rows")
    if n_features is not None and X.shape[1] != n_features:
        raise ValidationError(f"row width {X.shape[1]} does not match trained width {n_features}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("isolation forest input contains missing or non-finite values")
    return X


def if_fit(X, tree_count: int = 100, subsample_size: int = 256, seed: int = 0) -> IsolationForestModel:
    """Fit on an ``(n, D)`` array or an :class:`AlignedFrame`.

    Tree ``k`` draws from ``default_rng(seed + k)``, so trees are independent
    of build order.
    """
    X = _as_matrix(X)
    n = len(X)
    if n < 2:
        raise InsufficientRowsError("isolation forest needs at least 2 rows")
    psi = min(int(subsample_size), n)
    height_limit = int(math.ceil(math.log2(psi)))
    trees = []
    for k in range(tree_count):
        rng = np.random.default_rng(seed + k)
        rows = rng.choice(n, size=psi, replace=False)
        trees.append(_grow(X[rows], rng, height_limit))
    return IsolationForestModel(trees, X.shape[1], psi, tree_count, seed)


def if_score(model: IsolationForestModel, row) -> float | np.ndarray:
    """Score one row (returns a float) or many rows (returns an array)."""
    arr = np.asarray(getattr(row, "values", row), dtype=np.float64)
    single = arr.ndim == 1 and (model.n_features > 1 or arr.size == 1)
    scores = model.score(arr[None, :] if single else arr)
    return float(scores[0]) if single else scores


def tree_to_arrays(tree: IsolationTree) -> dict:
    return {"feature": tree.feature, "threshold": tree.threshold, "left": tree.left,
            "right": tree.right, "size": tree.size, "depth": tree.depth}
