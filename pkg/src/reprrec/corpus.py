"""Parsing of ratings, tags and item metadata, and assembly of the
artificial sentences that feed embedding training.

Every entity lives in one shared vocabulary, so tokens carry a namespace
prefix: ``u:`` users, ``m:`` movies, ``d:`` directors, ``a:`` actors and
``t:`` tags.
"""
from __future__ import annotations

import enum
import io
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence


class CorpusError(ValueError):
    """Raised for malformed input files."""


class Namespace(enum.Enum):
    USER = "u"
    MOVIE = "m"
    DIRECTOR = "d"
    ACTOR = "a"
    TAG = "t"

    @classmethod
    def parse(cls, name: str) -> "Namespace":
        """Accept either the one-letter prefix or the enum name."""
        key = name.strip().lower()
        for ns in cls:
            if key in (ns.value, ns.name.lower()):
                return ns
        raise ValueError(f"unknown namespace {name!r}")


@dataclass(frozen=True, order=True)
class EntityToken:
    namespace: Namespace = field(compare=False)
    raw: str = field(compare=False)
    # ordering and equality go through the canonical form
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "key", f"{self.namespace.value}:{self.raw}")

    def __str__(self) -> str:
        return self.key

    @classmethod
    def parse(cls, text: str) -> "EntityToken":
        prefix, sep, raw = text.partition(":")
        if not sep:
            raise ValueError(f"token {text!r} has no namespace prefix")
        return cls(Namespace.parse(prefix), raw)


def user(raw) -> EntityToken:
    return EntityToken(Namespace.USER, str(raw))


def movie(raw) -> EntityToken:
    return EntityToken(Namespace.MOVIE, str(raw))


def director(raw) -> EntityToken:
    return EntityToken(Namespace.DIRECTOR, str(raw))


def actor(raw) -> EntityToken:
    return EntityToken(Namespace.ACTOR, str(raw))


def tag(raw) -> EntityToken:
    return EntityToken(Namespace.TAG, str(raw))


@dataclass(frozen=True)
class RatingRecord:
    user: EntityToken
    movie: EntityToken
    rating: float
    timestamp: int | None = None


@dataclass(frozen=True)
class TagRecord:
    user: EntityToken
    movie: EntityToken
    tag: EntityToken


@dataclass(frozen=True)
class ItemMetadata:
    movie: EntityToken
    director: EntityToken | None = None
    actors: tuple[EntityToken, ...] = ()


Sentence = list  # list[EntityToken]; first a user, then a movie


def _lines(source) -> Iterable[tuple[int, str]]:
    """Yield (1-based line number, text) from bytes, text, or a stream."""
    if isinstance(source, bytes):
        source = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        source = io.StringIO(source)
    for lineno, line in enumerate(source, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        line = line.rstrip("\r\n")
        if line.strip():
            yield lineno, line


def normalize_tag(text: str) -> str:
    return text.strip().lower()


def parse_ratings(source: IO | bytes | str, scale: tuple[float, float] = (0.5, 5.0)) -> list[RatingRecord]:
    """Parse ``userId,movieId,rating[,timestamp]`` lines.

    A first line starting with ``userId`` is treated as a header.
    """
    lo, hi = scale
    records = []
    for lineno, line in _lines(source):
        if lineno == 1 and line.startswith("userId"):
            continue
        parts = line.split(",")
        if len(parts) not in (3, 4):
            raise CorpusError(f"line {lineno}: expected 3 or 4 fields, got {len(parts)}")
        uid, mid = parts[0].strip(), parts[1].strip()
        if not uid or not mid:
            raise CorpusError(f"line {lineno}: empty user or movie id")
        try:
            value = float(parts[2])
            ts = int(parts[3]) if len(parts) == 4 and parts[3].strip() else None
        except ValueError as exc:
            raise CorpusError(f"line {lineno}: {exc}") from None
        if not lo <= value <= hi:
            raise CorpusError(f"line {lineno}: rating {value} outside scale [{lo}, {hi}]")
        records.append(RatingRecord(user(uid), movie(mid), value, ts))
    return records


def parse_tags(source: IO | bytes | str) -> list[TagRecord]:
    """Parse ``userId,movieId,tag[,timestamp]`` lines; tags are lowercased and trimmed.

    Tag text containing commas is not supported unless a timestamp column is
    present, in which case everything between the second and last comma is
    taken as the tag.
    """
    records = []
    for lineno, line in _lines(source):
        if lineno == 1 and line.startswith("userId"):
            continue
        parts = line.split(",")
        if len(parts) < 3:
            raise CorpusError(f"line {lineno}: expected at least 3 fields, got {len(parts)}")
        if len(parts) == 3:
            text = parts[2]
        elif parts[-1].strip().isdigit():
            text = ",".join(parts[2:-1])
        else:
            text = ",".join(parts[2:])
        uid, mid = parts[0].strip(), parts[1].strip()
        text = normalize_tag(text)
        if not uid or not mid:
            raise CorpusError(f"line {lineno}: empty user or movie id")
        if not text:
            raise CorpusError(f"line {lineno}: empty tag")
        records.append(TagRecord(user(uid), movie(mid), tag(text)))
    return records


def parse_metadata(source: IO | bytes | str) -> list[ItemMetadata]:
    """Parse ``movieId<TAB>director<TAB>actor1|actor2|...`` lines."""
    items = []
    seen = set()
    for lineno, line in _lines(source):
        parts = line.split("\t")
        if len(parts) > 3:
            raise CorpusError(f"line {lineno}: expected at most 3 tab-separated fields")
        parts += [""] * (3 - len(parts))
        mid = parts[0].strip()
        if not mid:
            raise CorpusError(f"line {lineno}: empty movie id")
        if mid in seen:
            raise CorpusError(f"line {lineno}: duplicate metadata for movie {mid}")
        seen.add(mid)
        name = parts[1].strip()
        actors = []
        for a in parts[2].split("|"):
            a = a.strip()
            if a and a not in actors:
                actors.append(a)
        items.append(
            ItemMetadata(movie(mid), director(name) if name else None, tuple(actor(a) for a in actors))
        )
    return items


def build_sentences(
    ratings: Sequence[RatingRecord],
    tags: Sequence[TagRecord] = (),
    metadata: Sequence[ItemMetadata] = (),
    max_actors: int = 5,
) -> list[Sentence]:
    """One sentence per rating: user, movie, that user's tags on the movie
    (deduplicated, sorted), director, then the first ``max_actors`` actors."""
    if max_actors < 1:
        raise ValueError("max_actors must be positive")
    tags_by_pair = defaultdict(set)
    for t in tags:
        tags_by_pair[(t.user, t.movie)].add(t.tag)
    meta = {m.movie: m for m in metadata}

    sentences = []
    for r in ratings:
        tokens = [r.user, r.movie]
        tokens.extend(sorted(tags_by_pair.get((r.user, r.movie), ())))
        m = meta.get(r.movie)
        if m is not None:
            if m.director is not None:
                tokens.append(m.director)
            tokens.extend(m.actors[:max_actors])
        sentences.append(tokens)
    return sentences


class Vocabulary:
    """Dense bijection between tokens and indices, ordered by descending
    count with ties broken by canonical string."""

    def __init__(self, counts: dict[EntityToken, int]):
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0].key))
        self.tokens: list[EntityToken] = [tok for tok, _ in ordered]
        self.counts: list[int] = [c for _, c in ordered]
        self.index: dict[EntityToken, int] = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens and self.counts == other.counts

    def __repr__(self) -> str:
        return f"Vocabulary(V={len(self)})"

    def count(self, token: EntityToken) -> int:
        return self.counts[self.index[token]]

    def encode(self, sentence: Sequence[EntityToken]) -> list[int]:
        """Indices of in-vocabulary tokens, order preserved."""
        return [self.index[t] for t in sentence if t in self.index]

    def write(self, sink: IO[str]) -> None:
        for tok, c in zip(self.tokens, self.counts):
            sink.write(f"{tok}\t{c}\n")

    @classmethod
    def read(cls, source: IO | bytes | str) -> "Vocabulary":
        counts = {}
        for lineno, line in _lines(source):
            text, sep, c = line.rpartition("\t")
            if not sep:
                raise CorpusError(f"line {lineno}: expected token<TAB>count")
            tok = EntityToken.parse(text)
            if tok in counts:
                raise CorpusError(f"line {lineno}: duplicate token {tok}")
            counts[tok] = int(c)
        return cls(counts)


def build_vocabulary(sentences: Iterable[Sequence[EntityToken]], min_count: int = 1) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    for s in sentences:
        counts.update(s)
    kept = {tok: c for tok, c in counts.items() if c >= min_count}
    if not kept:
        raise CorpusError(f"vocabulary is empty after applying min_count={min_count}")
    return Vocabulary(kept)


def write_sentences(sentences: Iterable[Sequence[EntityToken]], sink: IO[str]) -> None:
    for s in sentences:
        sink.write(" ".join(str(t) for t in s))
        sink.write("\n")


def read_sentences(source: IO | bytes | str) -> list[Sentence]:
    """Inverse of :func:`write_sentences`.

    Tokens are separated by single spaces, but names and tags may contain
    spaces themselves, so a new token only starts where a known namespace
    prefix follows the space.
    """
    prefixes = tuple(f"{ns.value}:" for ns in Namespace)
    sentences = []
    for _, line in _lines(source):
        pieces = []
        for chunk in line.split(" "):
            if chunk.startswith(prefixes) or not pieces:
                pieces.append(chunk)
            else:
                pieces[-1] += " " + chunk
        sentences.append([EntityToken.parse(p) for p in pieces])
    return sentences
