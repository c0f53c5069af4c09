"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np


def _as_id(x) -> str:
    # 3.0 read back from a float array should still match the id "3"
    if isinstance(x, (float, np.floating)) and float(x).is_integer():
        return str(int(x))
    return str(x)


def check_pairs(X) -> list[tuple[str, str]]:
    """Coerce an (n, 2) array-like of (user, item) ids to a list of string pairs."""
    if hasattr(X, "to_numpy"):
        X = X.to_numpy()
    rows = list(X)
    pairs = []
    for n, row in enumerate(rows):
        row = list(row)
        if len(row) != 2:
            raise ValueError(f"row {n}: expected (user, item), got {len(row)} values")
        pairs.append((_as_id(row[0]), _as_id(row[1])))
    return pairs


def check_ratings(y, n: int, scale: tuple[float, float]) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != n:
        raise ValueError(f"got {y.shape[0]} ratings for {n} pairs")
    if not np.all(np.isfinite(y)):
        raise ValueError("ratings must be finite")
    lo, hi = scale
    if n and (y.min() < lo or y.max() > hi):
        raise ValueError(f"ratings must lie within [{lo}, {hi}]")
    return y


def check_component_matrix(P, n_components: int | None = None) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 1:
        P = P[None, :]
    if P.ndim != 2 or P.shape[1] == 0:
        raise ValueError("component predictions must be a 2-d array with at least one column")
    if n_components is not None and P.shape[1] != n_components:
        raise ValueError(f"expected {n_components} components, got {P.shape[1]}")
    if not np.all(np.isfinite(P)):
        raise ValueError("component predictions must be finite")
    return P
