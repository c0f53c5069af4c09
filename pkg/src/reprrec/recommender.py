"""Neighbourhood collaborative filtering with pluggable similarity sources.

User-based prediction averages the ratings that the ``k`` most similar
users gave the item, weighted by similarity; item-based prediction averages
the user's ratings on the ``k`` items most similar to the target.  The
similarity comes from rating vectors (UBCF/IBCF) or from learned
representations (UBCB/UBSG with CBOW/Skip-gram user vectors, IBCB/IBSG with
item vectors).
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_pairs, check_ratings
from .corpus import RatingRecord, movie, user
from .vectorspace import RepresentationStore

log = logging.getLogger(__name__)

MODEL_NAMES = ("UBCF", "IBCF", "UBCB", "IBCB", "UBSG", "IBSG")


class UnknownEntityError(KeyError):
    def __str__(self):
        return f"unknown entity: {self.args[0]}"


class UnqueryableEntityError(ValueError):
    """The entity has no usable vector under the chosen similarity source."""


class Target(enum.Enum):
    USER = "user"
    ITEM = "item"


class Fallback(enum.Enum):
    NONE = "None"
    GLOBAL_MEAN = "GlobalMean"
    USER_MEAN = "UserMean"
    ITEM_MEAN = "ItemMean"


@dataclass(frozen=True)
class Prediction:
    value: float
    neighborhood_used: int
    fallback: Fallback = Fallback.NONE


class RatingsStore:
    """Sparse user x item ratings with row and column views.

    Users and items are indexed in ascending canonical-string order, so an
    index tie-break is also a canonical-string tie-break.  Repeated
    (user, item) pairs are averaged.
    """

    def __init__(self, users: Sequence, items: Sequence, ratings: Sequence[float],
                 scale: tuple[float, float] = (0.5, 5.0)):
        users = [str(u) for u in users]
        items = [str(i) for i in items]
        ratings = np.asarray(ratings, dtype=np.float64)
        if not (len(users) == len(items) == len(ratings)):
            raise ValueError("users, items and ratings must have equal length")
        lo, hi = scale
        if len(ratings) and (ratings.min() < lo or ratings.max() > hi):
            raise ValueError(f"ratings must lie within [{lo}, {hi}]")
        self.scale = (float(lo), float(hi))
        self.user_ids = sorted(set(users), key=lambda r: user(r).key)
        self.item_ids = sorted(set(items), key=lambda r: movie(r).key)
        self.user_index = {u: n for n, u in enumerate(self.user_ids)}
        self.item_index = {i: n for n, i in enumerate(self.item_ids)}
        rows = np.array([self.user_index[u] for u in users], dtype=np.int64)
        cols = np.array([self.item_index[i] for i in items], dtype=np.int64)
        shape = (len(self.user_ids), len(self.item_ids))
        total = sp.coo_matrix((ratings, (rows, cols)), shape=shape).tocsr()
        count = sp.coo_matrix((np.ones_like(ratings), (rows, cols)), shape=shape).tocsr()
        total.sum_duplicates()
        count.sum_duplicates()
        self.matrix = total.copy()
        self.matrix.data = total.data / count.data
        self.matrix.sort_indices()
        self.by_item = self.matrix.tocsc()
        self.by_item.sort_indices()
        self.global_mean = float(self.matrix.data.mean()) if self.matrix.nnz else (lo + hi) / 2
        with np.errstate(invalid="ignore", divide="ignore"):
            self.user_means = np.asarray(self.matrix.sum(axis=1)).ravel() / np.diff(self.matrix.indptr)
            self.item_means = np.asarray(self.by_item.sum(axis=0)).ravel() / np.diff(self.by_item.indptr)

    @classmethod
    def from_records(cls, records: Sequence[RatingRecord], scale=(0.5, 5.0)) -> "RatingsStore":
        return cls([r.user.raw for r in records], [r.movie.raw for r in records],
                   [r.rating for r in records], scale)

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    def user_vector(self, u: str) -> np.ndarray:
        """Dense rating row of user ``u`` over all items (zeros where unrated)."""
        return self.matrix[self.user_index[str(u)]].toarray().ravel()

    def item_vector(self, i: str) -> np.ndarray:
        return self.by_item[:, self.item_index[str(i)]].toarray().ravel()

    def raters(self, item_idx: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.by_item.indptr[item_idx], self.by_item.indptr[item_idx + 1]
        return self.by_item.indices[lo:hi], self.by_item.data[lo:hi]

    def rated(self, user_idx: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.matrix.indptr[user_idx], self.matrix.indptr[user_idx + 1]
        return self.matrix.indices[lo:hi], self.matrix.data[lo:hi]

    def clamp(self, value: float) -> float:
        return float(min(max(value, self.scale[0]), self.scale[1]))


@dataclass(frozen=True)
class PredictorSpec:
    """``source`` is ``"ratings"``, a :class:`RepresentationStore`, or a
    callable ``(entity_a, entity_b) -> float`` over raw ids."""

    target: Target
    source: object = "ratings"
    k: int = 20
    neighbor_selection: str = "filter_first"

    def __post_init__(self):
        object.__setattr__(self, "target", Target(self.target))
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.neighbor_selection not in ("filter_first", "topk_first"):
            raise ValueError("neighbor_selection must be 'filter_first' or 'topk_first'")


class _SimilarityIndex:
    """Row-wise cosine similarities for one (store, spec) pair, cached per entity."""

    def __init__(self, ratings: RatingsStore, spec: PredictorSpec):
        self.ratings = ratings
        self.spec = spec
        self.user_side = spec.target is Target.USER
        self.ids = ratings.user_ids if self.user_side else ratings.item_ids
        self._rows: dict[int, np.ndarray] = {}
        src = spec.source
        if isinstance(src, str):
            if src != "ratings":
                raise ValueError(f"unknown similarity source {src!r}")
            m = ratings.matrix if self.user_side else ratings.by_item.T.tocsr()
            norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
            self.valid = norms > 0
            inv = np.where(self.valid, 1.0 / np.where(self.valid, norms, 1.0), 0.0)
            self.unit = sp.diags(inv) @ m
            self.unit = self.unit.tocsr()
            self.kind = "ratings"
        elif isinstance(src, RepresentationStore):
            make = user if self.user_side else movie
            dim = src.dim
            self.unit = np.zeros((len(self.ids), dim))
            self.valid = np.zeros(len(self.ids), dtype=bool)
            for n, raw in enumerate(self.ids):
                j = src.index.get(make(raw))
                if j is not None and src.queryable[j]:
                    self.unit[n] = src.unit[j]
                    self.valid[n] = True
            self.kind = "embeddings"
        elif callable(src):
            self.valid = np.ones(len(self.ids), dtype=bool)
            self.kind = "callable"
        else:
            raise TypeError(f"unsupported similarity source {type(src).__name__}")

    def row(self, n: int) -> np.ndarray:
        """Similarities of entity ``n`` to every entity; NaN where unqueryable."""
        cached = self._rows.get(n)
        if cached is not None:
            return cached
        if not self.valid[n]:
            raise UnqueryableEntityError(f"{self.ids[n]} has no usable vector")
        if self.kind == "ratings":
            sims = np.asarray((self.unit @ self.unit[n].T).todense()).ravel()
        elif self.kind == "embeddings":
            sims = self.unit @ self.unit[n]
        else:
            a = self.ids[n]
            sims = np.array([float(self.spec.source(a, b)) for b in self.ids])
        if self.kind != "callable":
            sims = np.clip(sims, -1.0, 1.0)
        sims[~self.valid] = np.nan
        self._rows[n] = sims
        return sims


def _index_for(ratings: RatingsStore, spec: PredictorSpec) -> _SimilarityIndex:
    cache = ratings.__dict__.setdefault("_sim_cache", {})
    key = (spec.target, id(spec.source) if not isinstance(spec.source, str) else spec.source)
    idx = cache.get(key)
    if idx is None or idx.spec.source is not spec.source:
        idx = cache[key] = _SimilarityIndex(ratings, spec)
    return idx


def similarity(a, b, spec: PredictorSpec, ratings: RatingsStore) -> float:
    """Cosine similarity of two users (or two items, per ``spec.target``)."""
    idx = _index_for(ratings, spec)
    lookup = ratings.user_index if idx.user_side else ratings.item_index
    try:
        na, nb = lookup[str(a)], lookup[str(b)]
    except KeyError as exc:
        raise UnknownEntityError(exc.args[0]) from None
    if not idx.valid[nb]:
        raise UnqueryableEntityError(f"{b} has no usable vector")
    return float(idx.row(na)[nb])


def _select_neighbors(sims: np.ndarray, candidates: np.ndarray, values: np.ndarray,
                      k: int, self_idx: int, topk_first: bool):
    """Return (similarities, ratings) of the chosen neighbourhood.

    ``candidates`` are the entities holding a usable rating; in topk-first
    mode the top ``k`` are drawn from every entity before that filter.
    """
    if topk_first:
        pool = np.flatnonzero(np.nan_to_num(sims, nan=-np.inf) > 0)
        pool = pool[pool != self_idx]
        pool = pool[np.lexsort((pool, -sims[pool]))][:k]
        keep = np.isin(candidates, pool)
        candidates, values = candidates[keep], values[keep]
        s = sims[candidates]
        return s, values
    keep = candidates != self_idx
    candidates, values = candidates[keep], values[keep]
    s = sims[candidates]
    ok = np.nan_to_num(s, nan=-np.inf) > 0
    candidates, values, s = candidates[ok], values[ok], s[ok]
    order = np.lexsort((candidates, -s))[:k]
    return s[order], values[order]


def _fallback(ratings: RatingsStore, u_idx, i_idx) -> Prediction:
    if i_idx is not None and np.isfinite(ratings.item_means[i_idx]):
        return Prediction(ratings.clamp(ratings.item_means[i_idx]), 0, Fallback.ITEM_MEAN)
    if u_idx is not None and np.isfinite(ratings.user_means[u_idx]):
        return Prediction(ratings.clamp(ratings.user_means[u_idx]), 0, Fallback.USER_MEAN)
    return Prediction(ratings.clamp(ratings.global_mean), 0, Fallback.GLOBAL_MEAN)


def _lookup(ratings: RatingsStore, u, i) -> tuple[int, int]:
    u_idx = ratings.user_index.get(str(u))
    if u_idx is None:
        raise UnknownEntityError(f"user {u}")
    i_idx = ratings.item_index.get(str(i))
    if i_idx is None:
        raise UnknownEntityError(f"item {i}")
    return u_idx, i_idx


def _weighted_mean(ratings, u_idx, i_idx, s, r) -> Prediction:
    if len(s) == 0:
        return _fallback(ratings, u_idx, i_idx)
    return Prediction(ratings.clamp(float(s @ r / s.sum())), len(s))


def predict_user_based(u, i, spec: PredictorSpec, ratings: RatingsStore) -> Prediction:
    if spec.target is not Target.USER:
        raise ValueError("spec targets items; use predict_item_based")
    u_idx, i_idx = _lookup(ratings, u, i)
    index = _index_for(ratings, spec)
    if not index.valid[u_idx]:
        return _fallback(ratings, u_idx, i_idx)
    raters, values = ratings.raters(i_idx)
    s, r = _select_neighbors(index.row(u_idx), raters, values, spec.k, u_idx,
                             spec.neighbor_selection == "topk_first")
    return _weighted_mean(ratings, u_idx, i_idx, s, r)


def predict_item_based(u, i, spec: PredictorSpec, ratings: RatingsStore) -> Prediction:
    if spec.target is not Target.ITEM:
        raise ValueError("spec targets users; use predict_user_based")
    u_idx, i_idx = _lookup(ratings, u, i)
    index = _index_for(ratings, spec)
    if not index.valid[i_idx]:
        return _fallback(ratings, u_idx, i_idx)
    items, values = ratings.rated(u_idx)
    s, r = _select_neighbors(index.row(i_idx), items, values, spec.k, i_idx,
                             spec.neighbor_selection == "topk_first")
    return _weighted_mean(ratings, u_idx, i_idx, s, r)


def predict(u, i, spec: PredictorSpec, ratings: RatingsStore) -> Prediction:
    fn = predict_user_based if spec.target is Target.USER else predict_item_based
    return fn(u, i, spec, ratings)


def predict_batch(pairs, spec: PredictorSpec, ratings: RatingsStore) -> list[Prediction]:
    """Predict every pair; failures (unknown ids) degrade to the fallback chain."""
    out = []
    for u, i in pairs:
        try:
            out.append(predict(u, i, spec, ratings))
        except (UnknownEntityError, UnqueryableEntityError) as exc:
            log.debug("fallback for (%s, %s): %s", u, i, exc)
            out.append(_fallback(ratings, ratings.user_index.get(str(u)), ratings.item_index.get(str(i))))
    return out


def predict_batch_multi_k(pairs, spec: PredictorSpec, ks: Sequence[int],
                          ratings: RatingsStore) -> dict[int, list[Prediction]]:
    """``predict_batch`` for several neighbourhood sizes at once.

    In filter-first mode the ranked neighbourhood is computed once per pair
    and truncated per ``k``; results equal separate ``predict_batch`` calls.
    """
    ks = list(ks)
    if spec.neighbor_selection == "topk_first":
        return {k: predict_batch(pairs, replace(spec, k=k), ratings) for k in ks}
    out: dict[int, list[Prediction]] = {k: [] for k in ks}
    kmax = max(ks)
    big = replace(spec, k=kmax)
    for u, i in pairs:
        try:
            u_idx, i_idx = _lookup(ratings, u, i)
            index = _index_for(ratings, big)
            if spec.target is Target.USER:
                self_idx = u_idx
                cand, values = ratings.raters(i_idx)
            else:
                self_idx = i_idx
                cand, values = ratings.rated(u_idx)
            if not index.valid[self_idx]:
                raise UnqueryableEntityError(str(self_idx))
            s, r = _select_neighbors(index.row(self_idx), cand, values, kmax, self_idx, False)
            for k in ks:
                out[k].append(_weighted_mean(ratings, u_idx, i_idx, s[:k], r[:k]))
        except (UnknownEntityError, UnqueryableEntityError):
            fb = _fallback(ratings, ratings.user_index.get(str(u)), ratings.item_index.get(str(i)))
            for k in ks:
                out[k].append(fb)
    return out


def make_spec(name: str, k: int, stores: dict | None = None, **kwargs) -> PredictorSpec:
    """Spec for one of the six named models; ``stores`` maps ``"cbow"``/``"sg"``
    to representation stores."""
    name = name.upper()
    if name not in MODEL_NAMES:
        raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    target = Target.USER if name.startswith("UB") else Target.ITEM
    suffix = name[2:]
    if suffix == "CF":
        source = "ratings"
    else:
        key = "cbow" if suffix == "CB" else "sg"
        if not stores or key not in stores:
            raise ValueError(f"{name} needs {key} representations")
        source = stores[key]
    return PredictorSpec(target, source, k, **kwargs)


class _KNNRegressor(RegressorMixin, BaseEstimator):
    _target: Target

    def __init__(self, k=20, embeddings=None, neighbor_selection="filter_first", rating_scale=(0.5, 5.0)):
        self.k = k
        self.embeddings = embeddings
        self.neighbor_selection = neighbor_selection
        self.rating_scale = rating_scale

    def fit(self, X, y):
        """``X`` holds (user id, item id) rows; ``y`` the ratings."""
        pairs = check_pairs(X)
        y = check_ratings(y, len(pairs), self.rating_scale)
        self.ratings_ = RatingsStore([p[0] for p in pairs], [p[1] for p in pairs], y, self.rating_scale)
        source = "ratings" if self.embeddings is None else self.embeddings
        self.spec_ = PredictorSpec(self._target, source, self.k, self.neighbor_selection)
        return self

    def predict_detailed(self, X) -> list[Prediction]:
        check_is_fitted(self, "ratings_")
        return predict_batch(check_pairs(X), self.spec_, self.ratings_)

    def predict(self, X) -> np.ndarray:
        return np.array([p.value for p in self.predict_detailed(X)], dtype=np.float64)


class UserKNNRegressor(_KNNRegressor):
    """User-based neighbourhood regressor (UBCF, or UBCB/UBSG with ``embeddings``)."""

    _target = Target.USER


class ItemKNNRegressor(_KNNRegressor):
    """Item-based neighbourhood regressor (IBCF, or IBCB/IBSG with ``embeddings``)."""

    _target = Target.ITEM
