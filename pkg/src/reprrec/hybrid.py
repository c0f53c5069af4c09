"""Linear weighted hybrid: a convex combination of component predictions,
with weights fitted on held-out ratings by minimizing squared error over
the probability simplex."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_component_matrix
from .config import read_kv, write_kv

log = logging.getLogger(__name__)

RIDGE = 1e-12


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{w : w >= 0, sum(w) = 1}`` (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


@dataclass(frozen=True)
class HybridWeights:
    names: tuple[str, ...]
    alpha: tuple[float, ...]

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        if len(self.names) != len(a) or len(a) == 0:
            raise ValueError("need one weight per named component")
        if np.any(a < 0) or abs(a.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "alpha", tuple(float(x) for x in a))

    def __getitem__(self, name: str) -> float:
        return self.alpha[self.names.index(name)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.alpha)

    def write(self, sink: IO[str]) -> None:
        write_kv(((n, repr(a)) for n, a in zip(self.names, self.alpha)), sink)

    @classmethod
    def read(cls, source: IO[str] | str) -> "HybridWeights":
        kv = read_kv(source)
        return cls(tuple(kv), tuple(float(v) for v in kv.values()))


def blend(component_predictions, weights, scale: tuple[float, float] | None = (0.5, 5.0)) -> float:
    """Weighted sum of component predictions, clamped to ``scale``."""
    p = np.asarray(component_predictions, dtype=np.float64)
    a = weights.as_array() if isinstance(weights, HybridWeights) else np.asarray(weights, dtype=np.float64)
    if p.shape != a.shape:
        raise ValueError(f"{p.size} component predictions for {a.size} weights")
    value = float(p @ a)
    if scale is not None:
        value = min(max(value, scale[0]), scale[1])
    return value


def _objective(P, y, w, target):
    r = P @ w - y
    return r @ r / len(y) + RIDGE * np.sum((w - target) ** 2)


def fit_weights(P, y, tol: float = 1e-8, max_iter: int = 10_000) -> tuple[np.ndarray, float, int]:
    """Minimize mean squared error of ``P @ w`` against ``y`` over the simplex.

    Accelerated projected gradient with function-value restarts; a ``1e-12``
    ridge toward uniform weights picks the uniform-most point among ties.
    The search starts from the best of the uniform point and the simplex
    vertices, and a vertex is returned if it beats the iterate, so the
    result is never worse than the best single component.

    Returns ``(weights, rmse, iterations)``.
    """
    P = check_component_matrix(P)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, m = P.shape
    if n == 0 or len(y) != n:
        raise ValueError("need at least one tuning row and one truth per row")
    uniform = np.full(m, 1.0 / m)
    if m == 1:
        w = np.ones(1)
        return w, float(np.sqrt(np.mean((P @ w - y) ** 2))), 0

    H = 2.0 * P.T @ P / n
    b = 2.0 * P.T @ y / n
    L = np.linalg.eigvalsh(H)[-1] + 2 * RIDGE
    step = 1.0 / max(L, 1e-300)

    def grad(w):
        return H @ w - b + 2 * RIDGE * (w - uniform)

    starts = [uniform] + list(np.eye(m))
    values = [_objective(P, y, s, uniform) for s in starts]
    w = starts[int(np.argmin(values))].copy()
    best, best_f = w.copy(), min(values)
    z, t, f_prev = w.copy(), 1.0, best_f
    it = 0
    for it in range(1, max_iter + 1):
        w_next = project_simplex(z - step * grad(z))
        f = _objective(P, y, w_next, uniform)
        if f > f_prev:
            # restart momentum from the last accepted point
            z, t = w.copy(), 1.0
            continue
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = w_next + ((t - 1) / t_next) * (w_next - w)
        w, t, f_prev = w_next, t_next, f
        if f < best_f:
            best, best_f = w.copy(), f
        mapping = (w - project_simplex(w - step * grad(w))) / step
        if np.linalg.norm(mapping) < tol:
            break

    mse = lambda v: float(np.mean((P @ v - y) ** 2))
    vertex = int(np.argmin([mse(e) for e in np.eye(m)]))
    if mse(np.eye(m)[vertex]) < mse(best):
        best = np.eye(m)[vertex]
    best = np.maximum(best, 0.0)
    best /= best.sum()
    log.debug("hybrid fit: %d iterations, rmse %.6f", it, np.sqrt(mse(best)))
    return best, float(np.sqrt(mse(best))), it


class LinearWeightedHybrid(RegressorMixin, BaseEstimator):
    """Estimator over a matrix of component predictions (one column per
    component)."""

    def __init__(self, component_names: Sequence[str] | None = None, rating_scale=(0.5, 5.0),
                 tol=1e-8, max_iter=10_000):
        self.component_names = component_names
        self.rating_scale = rating_scale
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        P = check_component_matrix(X)
        names = self.component_names or [f"c{j}" for j in range(P.shape[1])]
        if len(names) != P.shape[1]:
            raise ValueError("component_names does not match the number of columns")
        w, self.rmse_, self.n_iter_ = fit_weights(P, y, self.tol, self.max_iter)
        self.weights_ = HybridWeights(tuple(names), tuple(w))
        self.coef_ = self.weights_.as_array()
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "weights_")
        P = check_component_matrix(X, len(self.coef_))
        lo, hi = self.rating_scale
        return np.clip(P @ self.coef_, lo, hi)
