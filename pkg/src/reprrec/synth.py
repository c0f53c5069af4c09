"""Seeded synthetic ratings/tags/metadata with planted genre clusters.

Movies are split round-robin into clusters.  Each cluster owns its own
directors, actors and tag vocabulary; each user prefers one cluster, rates
mostly movies from it and rates those high; every other cluster gets its
own user-specific mean rating.  Users tag movies with words from the
movie's cluster.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .corpus import ItemMetadata, RatingRecord, TagRecord, actor, director, movie, tag, user


@dataclass
class SyntheticData:
    ratings: list[RatingRecord]
    tags: list[TagRecord]
    metadata: list[ItemMetadata]
    movie_cluster: dict[str, int]
    user_cluster: dict[str, int]
    params: dict = field(default_factory=dict)


def generate(users: int = 200, movies: int = 80, clusters: int = 4, seed: int = 0,
             ratings_per_user: int = 15, preference: float = 0.5, tag_rate: float = 0.3,
             directors_per_cluster: int = 3, actors_per_cluster: int = 12, actors_per_movie: int = 5,
             tags_per_cluster: int = 6, noise: float = 0.5) -> SyntheticData:
    if users < 0 or movies < 0 or clusters < 1:
        raise ValueError("users and movies must be non-negative, clusters positive")
    rng = np.random.default_rng(seed)
    movie_cluster = {str(m + 1): m % clusters for m in range(movies)}
    by_cluster = [[mid for mid, c in movie_cluster.items() if c == k] for k in range(clusters)]

    metadata = []
    for mid, c in movie_cluster.items():
        d = director(f"Director {c}-{rng.integers(directors_per_cluster)}")
        n_act = min(actors_per_movie, actors_per_cluster)
        cast = rng.choice(actors_per_cluster, size=n_act, replace=False)
        metadata.append(ItemMetadata(movie(mid), d, tuple(actor(f"Actor {c}-{a}") for a in cast)))

    quality = {mid: rng.normal(0.0, 0.3) for mid in movie_cluster}
    ratings, tags, user_cluster = [], [], {}
    other = [k for k in range(clusters)]
    for u in range(users):
        uid = str(u + 1)
        pref = int(rng.integers(clusters))
        user_cluster[uid] = pref
        # taste for each cluster: the preferred one high, the others user-specific
        taste = rng.uniform(1.0, 3.5, size=clusters)
        taste[pref] = 4.3
        if not movies:
            continue
        n = min(ratings_per_user, movies)
        chosen: list[str] = []
        while len(chosen) < n:
            if clusters == 1 or rng.random() < preference:
                pool = by_cluster[pref]
            else:
                pool = by_cluster[rng.choice([k for k in other if k != pref])]
            candidates = [m for m in pool if m not in chosen]
            if not candidates:
                candidates = [m for m in movie_cluster if m not in chosen]
            chosen.append(candidates[rng.integers(len(candidates))])
        for ts, mid in enumerate(chosen):
            value = taste[movie_cluster[mid]] + quality[mid] + rng.normal(0.0, noise)
            value = float(np.clip(np.round(value * 2) / 2, 0.5, 5.0))
            ratings.append(RatingRecord(user(uid), movie(mid), value, 1_000_000 + 100 * u + ts))
            if rng.random() < tag_rate:
                word = rng.integers(tags_per_cluster)
                tags.append(TagRecord(user(uid), movie(mid), tag(f"theme {movie_cluster[mid]}-{word}")))

    params = dict(users=users, movies=movies, clusters=clusters, seed=seed,
                  ratings_per_user=ratings_per_user, preference=preference, tag_rate=tag_rate)
    return SyntheticData(ratings, tags, metadata, movie_cluster, user_cluster, params)


def write(data: SyntheticData, directory: str) -> dict[str, str]:
    """Write ratings.csv, tags.csv, metadata.tsv and clusters.tsv; return their paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {name: os.path.join(directory, name)
             for name in ("ratings.csv", "tags.csv", "metadata.tsv", "clusters.tsv")}
    with open(paths["ratings.csv"], "w", encoding="utf-8", newline="\n") as fh:
        for r in data.ratings:
            fh.write(f"{r.user.raw},{r.movie.raw},{r.rating:.1f},{r.timestamp}\n")
    with open(paths["tags.csv"], "w", encoding="utf-8", newline="\n") as fh:
        for t in data.tags:
            fh.write(f"{t.user.raw},{t.movie.raw},{t.tag.raw}\n")
    with open(paths["metadata.tsv"], "w", encoding="utf-8", newline="\n") as fh:
        for m in data.metadata:
            d = m.director.raw if m.director else ""
            fh.write(f"{m.movie.raw}\t{d}\t{'|'.join(a.raw for a in m.actors)}\n")
    with open(paths["clusters.tsv"], "w", encoding="utf-8", newline="\n") as fh:
        for mid, c in data.movie_cluster.items():
            fh.write(f"m:{mid}\t{c}\n")
        for uid, c in data.user_cluster.items():
            fh.write(f"u:{uid}\t{c}\n")
    return paths
