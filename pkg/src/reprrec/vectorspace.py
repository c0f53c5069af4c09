"""Cosine similarity, nearest-neighbour and vector-arithmetic queries over
learned representations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import EntityToken, Namespace


class UnknownTokenError(KeyError):
    def __str__(self):
        return f"unknown token: {self.args[0]}"


class DegenerateQueryError(ValueError):
    """The query vector has zero norm."""


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateQueryError("cosine is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


class RepresentationStore:
    """Immutable token -> vector map with precomputed norms.

    Zero-norm vectors are kept but never returned by :meth:`nearest` and
    rejected as query operands.
    """

    def __init__(self, tokens: Sequence[EntityToken], vectors):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(tokens):
            raise ValueError("need one row per token")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("vectors must be finite")
        self.tokens = list(tokens)
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens")
        self.norms = np.linalg.norm(vectors, axis=1)
        self.queryable = self.norms > 0
        safe = np.where(self.queryable, self.norms, 1.0)
        self.unit = vectors / safe[:, None]
        self.query_only = False
        self._keys = np.array([t.key for t in self.tokens], dtype=object)
        self._ns = np.array([t.namespace.value for t in self.tokens], dtype=object)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def vector(self, token: EntityToken) -> np.ndarray:
        try:
            return self.vectors[self.index[token]]
        except KeyError:
            raise UnknownTokenError(str(token)) from None

    def unit_vector(self, token: EntityToken) -> np.ndarray:
        i = self.index.get(token)
        if i is None:
            raise UnknownTokenError(str(token))
        if not self.queryable[i]:
            raise DegenerateQueryError(f"token {token} has a zero vector")
        return self.unit[i]

    def similarity(self, a: EntityToken, b: EntityToken) -> float:
        return float(np.clip(self.unit_vector(a) @ self.unit_vector(b), -1.0, 1.0))

    def nearest(self, query, k: int = 10, filter: Namespace | None = None,
                exclude: Iterable[EntityToken] = ()) -> list[tuple[EntityToken, float]]:
        """Top ``k`` tokens by cosine to ``query``; ties go to the smaller
        canonical string."""
        if k < 1:
            raise ValueError("k must be positive")
        q = np.asarray(query, dtype=np.float64)
        nq = np.linalg.norm(q)
        if nq == 0:
            raise DegenerateQueryError("query vector is zero")
        sims = np.clip(self.unit @ (q / nq), -1.0, 1.0)
        mask = self.queryable.copy()
        if filter is not None:
            mask &= self._ns == filter.value
        for t in exclude:
            i = self.index.get(t)
            if i is not None:
                mask[i] = False
        cand = np.flatnonzero(mask)
        # lexsort: last key is primary
        order = np.lexsort((self._keys[cand], -sims[cand]))[:k]
        return [(self.tokens[cand[j]], float(sims[cand[j]])) for j in order]


@dataclass(frozen=True)
class ArithmeticQuery:
    plus: tuple[EntityToken, ...]
    minus: tuple[EntityToken, ...] = ()
    filter: Namespace | None = None
    k: int = 5
    exclude_operands: bool = True

    def __post_init__(self):
        object.__setattr__(self, "plus", tuple(self.plus))
        object.__setattr__(self, "minus", tuple(self.minus))
        if not self.plus:
            raise ValueError("analogy query needs at least one positive operand")
        if self.k < 1:
            raise ValueError("k must be positive")


def combine(query: ArithmeticQuery, store: RepresentationStore):
    """Sum of unit-normalized ``plus`` operands minus unit-normalized ``minus``
    operands, and its nearest neighbours."""
    vec = np.zeros(store.dim)
    for t in query.plus:
        vec += store.unit_vector(t)
    for t in query.minus:
        vec -= store.unit_vector(t)
    if np.linalg.norm(vec) <= 1e-12 * (len(query.plus) + len(query.minus)):
        raise DegenerateQueryError("operands cancel to the zero vector")
    exclude = set(query.plus) | set(query.minus) if query.exclude_operands else set()
    return vec, store.nearest(vec, query.k, query.filter, exclude)
