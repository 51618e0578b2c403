"""One-class SVM with an RBF kernel, trained by SMO on the dual.

The dual is scaled so that ``sum(alpha) == 1`` and ``0 <= alpha_i <= 1/(nu*n)``::

    minimise  0.5 * alpha' K alpha

Working pairs are picked with the second-order rule of Fan, Chen & Lin (2005).
Decision function ``f(x) = sum_i alpha_i K(x_i, x) - rho``; ``f >= 0`` is an
inlier (+1).
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import ConvergenceError, InsufficientRowsError, ValidationError

TAU = 1e-12
FULL_KERNEL_LIMIT = 3000


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


class _KernelRows:
    """Rows of the training kernel matrix, precomputed when small, cached otherwise."""

    def __init__(self, X, gamma, cache_rows=1024):
        self.X = X
        self.gamma = gamma
        self.full = rbf_kernel(X, X, gamma) if len(X) <= FULL_KERNEL_LIMIT else None
        self.cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self.cache_rows = cache_rows

    def row(self, i):
        if self.full is not None:
            return self.full[i]
        r = self.cache.get(i)
        if r is None:
            r = rbf_kernel(self.X[i:i + 1], self.X, self.gamma)[0]
            self.cache[i] = r
            if len(self.cache) > self.cache_rows:
                self.cache.popitem(last=False)
        else:
            self.cache.move_to_end(i)
        return r

    def matvec(self, v, chunk=2048):
        if self.full is not None:
            return self.full @ v
        out = np.empty(len(self.X))
        for s in range(0, len(self.X), chunk):
            out[s:s + chunk] = rbf_kernel(self.X[s:s + chunk], self.X, self.gamma) @ v
        return out


@dataclass
class OcsvmModel:
    support_vectors: np.ndarray
    alpha: np.ndarray  # coefficients of the support vectors only
    rho: float
    gamma: float
    nu: float
    n_train: int
    kkt_residual: float
    iterations: int
    alpha_full: np.ndarray | None = None  # every training coefficient, zeros included

    @property
    def upper_bound(self) -> float:
        return 1.0 / (self.nu * self.n_train)

    def decision_function(self, X) -> np.ndarray:
        X = _as_matrix(X, self.support_vectors.shape[1])
        return rbf_kernel(X, self.support_vectors, self.gamma) @ self.alpha - self.rho

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0.0, 1, -1)


def _as_matrix(X, n_features=None):
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :] if n_features not in (None, 1) else X[:, None]
    if X.ndim != 2:
        raise ValidationError("expected a 2-D array of rows")
    if n_features is not None and X.shape[1] != n_features:
        raise ValidationError(f"row width {X.shape[1]} does not match trained width {n_features}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("one-class SVM input contains missing or non-finite values")
    return X


def ocsvm_fit(X, nu: float = 0.5, gamma="auto", tol: float = 1e-3,
              max_iter: int | None = None) -> OcsvmModel:
    """Fit on an ``(n, D)`` array or an :class:`AlignedFrame`.

    ``gamma="auto"`` means ``1 / D``.  Raises :class:`ConvergenceError` if the
    maximal KKT violation is still above ``tol`` after ``max_iter`` steps.
    """
    X = _as_matrix(X)
    n, D = X.shape
    if n < 2:
        raise InsufficientRowsError("one-class SVM needs at least 2 rows")
    if not (0.0 < nu <= 1.0):
        raise ValidationError(f"nu must lie in (0, 1], got {nu}")
    if gamma == "auto":
        gamma = 1.0 / D
    gamma = float(gamma)
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    C = 1.0 / (nu * n)
    if max_iter is None:
        max_iter = max(100_000, 200 * n)

    K = _KernelRows(X, gamma)
    alpha = np.full(n, 1.0 / n)
    G = K.matvec(alpha)
    # slack on the bounds so rounding does not keep an index in the wrong set
    eps = 1e-12 * C

    it = 0
    residual = np.inf
    while True:
        up = alpha < C - eps
        low = alpha > eps
        neg_g = -G
        cand_up = np.where(up, neg_g, -np.inf)
        i = int(np.argmax(cand_up))
        m = cand_up[i]
        M = np.min(np.where(low, neg_g, np.inf))
        residual = float(m - M)
        if residual <= tol:
            break
        if it >= max_iter:
            raise ConvergenceError(
                f"SMO did not reach KKT tolerance {tol} in {max_iter} iterations "
                f"(residual {residual:.3g})", residual=residual)
        Ki = K.row(i)
        # second-order choice of j among violating lower-set indices
        b = m - neg_g
        viol = low & (b > 0)
        a = Ki[i] + 1.0 - 2.0 * Ki  # RBF diagonal is 1
        a = np.where(a > 0, a, TAU)
        gain = np.where(viol, -(b * b) / a, np.inf)
        j = int(np.argmin(gain))
        Kj = K.row(j)
        quad = max(Ki[i] + Kj[j] - 2.0 * Ki[j], TAU)
        delta = (G[j] - G[i]) / quad
        delta = min(delta, C - alpha[i], alpha[j])
        alpha[i] += delta
        alpha[j] -= delta
        if alpha[j] < eps:
            alpha[j] = 0.0
        if alpha[i] > C - eps:
            alpha[i] = C
        G += delta * (Ki - Kj)
        it += 1

    free = (alpha > eps) & (alpha < C - eps)
    if np.any(free):
        rho = float(G[free].mean())
    else:
        at_upper = alpha >= C - eps
        at_zero = alpha <= eps
        hi = G[at_zero].min() if np.any(at_zero) else G.max()
        lo = G[at_upper].max() if np.any(at_upper) else G.min()
        rho = float((hi + lo) / 2.0)
    sv = alpha > 0
    return OcsvmModel(X[sv].copy(), alpha[sv].copy(), rho, gamma, float(nu), n,
                      max(residual, 0.0), it, alpha_full=alpha.copy())


def ocsvm_predict(model: OcsvmModel, row):
    """+1 / -1 for one row, or an array of labels for a 2-D input."""
    arr = np.asarray(getattr(row, "values", row), dtype=np.float64)
    D = model.support_vectors.shape[1]
    if arr.ndim == 1 and (D > 1 or arr.size == 1):
        return int(model.predict(arr[None, :])[0])
    return model.predict(arr)
