"""CBOW and Skip-gram training with negative sampling, hierarchical softmax
or the exact softmax.

The loss/gradient functions in this module are plain numpy reference
implementations; the SGD loop itself runs in :mod:`reprrec._kernels`.
"""
from __future__ import annotations

import enum
import heapq
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from .corpus import CorpusError, EntityToken, Vocabulary, build_vocabulary
from .vectorspace import RepresentationStore

log = logging.getLogger(__name__)

EXACT_SOFTMAX_MAX_VOCAB = 10_000


class Architecture(enum.Enum):
    CBOW = "cbow"
    SKIPGRAM = "sg"


class Loss(enum.Enum):
    NEGATIVE_SAMPLING = "ns"
    HIERARCHICAL_SOFTMAX = "hs"
    EXACT_SOFTMAX = "exact"


@dataclass(frozen=True)
class EmbeddingConfig:
    model: Architecture = Architecture.SKIPGRAM
    loss: Loss = Loss.NEGATIVE_SAMPLING
    dim: int = 100
    window: int = 10
    epochs: int = 5
    negatives: int = 5
    lr_initial: float | None = None  # 0.05 for CBOW, 0.025 for Skip-gram
    lr_final: float = 1e-4
    noise_exponent: float = 0.75
    seed: int = 1
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "model", Architecture(self.model))
        object.__setattr__(self, "loss", Loss(self.loss))
        if self.lr_initial is None:
            lr = 0.05 if self.model is Architecture.CBOW else 0.025
            object.__setattr__(self, "lr_initial", lr)
        if self.dim < 1 or self.window < 1 or self.negatives < 1 or self.workers < 1:
            raise ValueError("dim, window, negatives and workers must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.lr_initial <= 0 or self.lr_final < 0 or self.lr_final > self.lr_initial:
            raise ValueError("need 0 <= lr_final <= lr_initial and lr_initial > 0")


class NoiseTable:
    """Unigram counts raised to ``exponent``, normalized, as a CDF."""

    def __init__(self, counts: Sequence[int], exponent: float = 0.75):
        weights = np.asarray(counts, dtype=np.float64) ** exponent
        if weights.size == 0 or np.any(weights <= 0):
            raise ValueError("noise table needs positive counts")
        self.probabilities = weights / weights.sum()
        self.cdf = np.cumsum(self.probabilities)
        self.cdf[-1] = 1.0

    def __len__(self):
        return self.cdf.shape[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = np.searchsorted(self.cdf, rng.random(n), side="right")
        return np.minimum(idx, len(self) - 1)


class HuffmanTree:
    """Binary Huffman coding of the vocabulary.

    Leaves are vocabulary indices ``0..V-1``; the ``V-1`` internal nodes are
    numbered in creation order, so the root is ``V-2``.  At each merge the
    first node popped becomes the 0-branch.  Equal weights merge the node
    holding the smallest vocabulary index first.
    """

    def __init__(self, counts: Sequence[int]):
        n = len(counts)
        if n < 2:
            raise ValueError("a Huffman tree needs at least two leaves")
        heap = [(int(c), i, i) for i, c in enumerate(counts)]
        heapq.heapify(heap)
        children = {}
        for internal in range(n - 1):
            c0, m0, node0 = heapq.heappop(heap)
            c1, m1, node1 = heapq.heappop(heap)
            node = n + internal
            children[node] = (node0, node1)
            heapq.heappush(heap, (c0 + c1, min(m0, m1), node))

        self.codes: list[list[int]] = [[] for _ in range(n)]
        self.paths: list[list[int]] = [[] for _ in range(n)]
        stack = [(heap[0][2], [], [])]
        while stack:
            node, code, path = stack.pop()
            if node < n:
                self.codes[node], self.paths[node] = code, path
                continue
            left, right = children[node]
            path = path + [node - n]
            stack.append((left, code + [0], path))
            stack.append((right, code + [1], path))

        lengths = np.array([len(c) for c in self.codes], dtype=np.int64)
        self.code_offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        self.flat_codes = np.array([b for c in self.codes for b in c], dtype=np.int8)
        self.flat_points = np.array([p for path in self.paths for p in path], dtype=np.int64)

    @property
    def n_internal(self) -> int:
        return len(self.codes) - 1

    def weighted_length(self, counts: Sequence[int]) -> int:
        return int(sum(c * len(code) for c, code in zip(counts, self.codes)))


@dataclass
class EmbeddingModel:
    vocabulary: Vocabulary
    input_vectors: np.ndarray
    output_vectors: np.ndarray
    config: EmbeddingConfig
    node_vectors: np.ndarray | None = None
    tree: HuffmanTree | None = field(default=None, repr=False)
    noise: NoiseTable | None = field(default=None, repr=False)

    def store(self) -> RepresentationStore:
        return RepresentationStore(self.vocabulary.tokens, self.input_vectors)


def init_model(vocabulary: Vocabulary, config: EmbeddingConfig) -> EmbeddingModel:
    """Input vectors uniform in ``[-0.5/R, 0.5/R]``; output and node vectors zero."""
    V, R = len(vocabulary), config.dim
    if V < 2:
        raise ValueError("training needs a vocabulary of at least two tokens")
    if config.loss is Loss.EXACT_SOFTMAX and V > EXACT_SOFTMAX_MAX_VOCAB:
        raise ValueError(f"exact softmax is limited to V <= {EXACT_SOFTMAX_MAX_VOCAB}")
    rng = np.random.default_rng(config.seed)
    syn0 = (rng.random((V, R)) - 0.5) / R
    model = EmbeddingModel(vocabulary, syn0, np.zeros((V, R)), config)
    if config.loss is Loss.HIERARCHICAL_SOFTMAX:
        model.tree = HuffmanTree(vocabulary.counts)
        model.node_vectors = np.zeros((V - 1, R))
    else:
        model.noise = NoiseTable(vocabulary.counts, config.noise_exponent)
    return model


def softmax_distribution(activations) -> np.ndarray:
    a = np.asarray(activations, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("activations must be finite")
    e = np.exp(a - a.max())
    return e / e.sum()


def cbow_hidden(context_indices: Sequence[int], input_vectors: np.ndarray) -> np.ndarray:
    if len(context_indices) == 0:
        raise ValueError("CBOW context is empty")
    return input_vectors[np.asarray(context_indices)].mean(axis=0)


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(log_sigmoid(x))


def draw_negatives(noise: NoiseTable, target: int, K: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(K, dtype=np.int64)
    for k in range(K):
        w = target
        while w == target:
            w = int(noise.sample(1, rng)[0])
        out[k] = w
    return out


def _collect_rows(indices, coefs, h):
    rows: dict[int, np.ndarray] = {}
    for idx, g in zip(indices, coefs):
        rows[int(idx)] = rows.get(int(idx), 0.0) + g * h
    return list(rows.items())


def ns_loss_and_grads(h, target, output_vectors, noise=None, K=5, rng=None, negatives=None):
    """Negative-sampling loss for predicting ``target`` from hidden vector ``h``.

    Either pass ``negatives`` explicitly or a ``noise`` table, ``K`` and a
    numpy ``rng`` to draw them (redrawing collisions with the target).

    Returns ``(loss, grad_h, [(row, grad_row), ...])`` where the gradients
    are partial derivatives of the loss.
    """
    h = np.asarray(h, dtype=np.float64)
    if negatives is None:
        negatives = draw_negatives(noise, target, K, rng)
    negatives = np.asarray(negatives, dtype=np.int64)
    o_t = output_vectors[target]
    o_n = output_vectors[negatives]
    f_t = h @ o_t
    f_n = o_n @ h
    loss = -log_sigmoid(f_t) - log_sigmoid(-f_n).sum()
    # dL/df_t = sigma(f_t) - 1 ; dL/df_n = sigma(f_n)
    g_t = _sigmoid(f_t) - 1.0
    g_n = _sigmoid(f_n)
    grad_h = g_t * o_t + g_n @ o_n
    rows = _collect_rows(np.concatenate([[target], negatives]), np.concatenate([[g_t], g_n]), h)
    return float(loss), grad_h, rows


def hs_loss_and_grads(h, target, tree: HuffmanTree, node_vectors):
    """Hierarchical-softmax loss: code bit 0 scores sigma(h.n), bit 1 sigma(-h.n)."""
    h = np.asarray(h, dtype=np.float64)
    path = np.asarray(tree.paths[target], dtype=np.int64)
    sign = 1.0 - 2.0 * np.asarray(tree.codes[target], dtype=np.float64)
    nodes = node_vectors[path]
    f = nodes @ h
    loss = -log_sigmoid(sign * f).sum()
    g = -sign * (1.0 - _sigmoid(sign * f))
    grad_h = g @ nodes
    return float(loss), grad_h, _collect_rows(path, g, h)


def exact_loss_and_grads(h, target, output_vectors):
    """Full-softmax cross entropy; gradient rows cover the whole output matrix."""
    h = np.asarray(h, dtype=np.float64)
    act = output_vectors @ h
    p = softmax_distribution(act)
    loss = -(act[target] - act.max() - np.log(np.exp(act - act.max()).sum()))
    err = p.copy()
    err[target] -= 1.0
    grad_h = err @ output_vectors
    return float(loss), grad_h, np.outer(err, h)


def encode_corpus(sentences, vocabulary: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Flatten in-vocabulary sentences of length >= 2 into (tokens, offsets)."""
    tokens, offsets = [], [0]
    for s in sentences:
        enc = vocabulary.encode(s)
        if len(enc) >= 2:
            tokens.extend(enc)
            offsets.append(len(tokens))
    return np.asarray(tokens, dtype=np.int64), np.asarray(offsets, dtype=np.int64)


def _kernel_codes(config):
    arch = _kernels.CBOW if config.model is Architecture.CBOW else _kernels.SKIPGRAM
    loss = {
        Loss.NEGATIVE_SAMPLING: _kernels.NEGATIVE_SAMPLING,
        Loss.HIERARCHICAL_SOFTMAX: _kernels.HIERARCHICAL_SOFTMAX,
        Loss.EXACT_SOFTMAX: _kernels.EXACT_SOFTMAX,
    }[config.loss]
    return arch, loss


def train(sentences, vocabulary: Vocabulary, config: EmbeddingConfig) -> EmbeddingModel:
    """Train a model by SGD over ``sentences``.

    With ``config.workers > 1`` the corpus is split into contiguous shards
    updated concurrently without locks; only single-worker runs are
    reproducible.
    """
    model = init_model(vocabulary, config)
    tokens, offsets = encode_corpus(sentences, vocabulary)
    n_sent = len(offsets) - 1
    if n_sent == 0:
        raise CorpusError("no in-vocabulary sentence of length >= 2 to train on")
    if config.epochs == 0:
        return model

    arch, loss = _kernel_codes(config)
    if model.tree is not None:
        syn1 = model.node_vectors
        codes, points, code_offsets = model.tree.flat_codes, model.tree.flat_points, model.tree.code_offsets
        cdf = np.ones(1)
    else:
        syn1 = model.output_vectors
        codes, points, code_offsets = np.zeros(0, np.int8), np.zeros(0, np.int64), np.zeros(1, np.int64)
        cdf = model.noise.cdf

    workers = min(config.workers, n_sent)
    seeds = np.random.SeedSequence(config.seed).generate_state(workers, dtype=np.uint64)
    bounds = np.linspace(0, n_sent, workers + 1).astype(np.int64)

    def run(w):
        return _kernels.train_shard(
            model.input_vectors, syn1, tokens, offsets, int(bounds[w]), int(bounds[w + 1]),
            arch, loss, config.window, config.negatives, cdf, codes, points, code_offsets,
            float(config.lr_initial), float(config.lr_final), config.epochs, seeds[w],
        )

    log.info("training %s/%s: V=%d R=%d sentences=%d epochs=%d workers=%d",
             config.model.value, config.loss.value, len(vocabulary), config.dim,
             n_sent, config.epochs, workers)
    if workers == 1:
        run(0)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, range(workers)))
    if not np.all(np.isfinite(model.input_vectors)):
        raise FloatingPointError("training diverged; lower the learning rate")
    return model


def save_embeddings(model_or_store, sink: IO[str]) -> None:
    """Write ``V R`` then one ``token v1 ... vR`` line per token (input vectors)."""
    if isinstance(model_or_store, EmbeddingModel):
        tokens, matrix = model_or_store.vocabulary.tokens, model_or_store.input_vectors
    else:
        tokens, matrix = model_or_store.tokens, model_or_store.vectors
    V, R = matrix.shape
    sink.write(f"{V} {R}\n")
    for tok, row in zip(tokens, matrix):
        sink.write(str(tok))
        for x in row:
            sink.write(" %.17g" % x)
        sink.write("\n")


def load_embeddings(source: IO | str | bytes) -> RepresentationStore:
    """Read the text format written by :func:`save_embeddings`.

    Tokens may contain spaces; the last ``R`` fields of a row are the
    vector.  A single-token file loads as a query-only store.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = [ln.decode("utf-8") if isinstance(ln, bytes) else ln for ln in source]
    lines = [ln.rstrip("\r\n") for ln in lines if ln.strip()]
    if not lines:
        raise CorpusError("empty embeddings file")
    try:
        V, R = (int(x) for x in lines[0].split())
    except ValueError:
        raise CorpusError("line 1: header must be 'V R'") from None
    if len(lines) - 1 != V:
        raise CorpusError(f"header declares {V} rows, found {len(lines) - 1}")
    tokens, rows, seen = [], np.empty((V, R)), set()
    for i, line in enumerate(lines[1:]):
        parts = line.split(" ")
        # the token itself may contain spaces; the last R fields are numbers
        n_num = 0
        for p in reversed(parts):
            try:
                float(p)
            except ValueError:
                break
            n_num += 1
        if n_num != R or len(parts) == n_num:
            raise CorpusError(f"line {i + 2}: expected a token and {R} components, got {n_num} components")
        tok = EntityToken.parse(" ".join(parts[:-R]))
        if tok in seen:
            raise CorpusError(f"line {i + 2}: duplicate token {tok}")
        seen.add(tok)
        tokens.append(tok)
        rows[i] = [float(x) for x in parts[-R:]]
    store = RepresentationStore(tokens, rows)
    store.query_only = V < 2
    return store


class Word2VecEmbedder(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` learns vectors from sentences, ``transform``
    maps tokens to their input vectors."""

    def __init__(self, model="sg", loss="ns", dim=100, window=10, epochs=5, negatives=5,
                 lr_initial=None, lr_final=1e-4, noise_exponent=0.75, min_count=1,
                 seed=1, workers=1):
        self.model = model
        self.loss = loss
        self.dim = dim
        self.window = window
        self.epochs = epochs
        self.negatives = negatives
        self.lr_initial = lr_initial
        self.lr_final = lr_final
        self.noise_exponent = noise_exponent
        self.min_count = min_count
        self.seed = seed
        self.workers = workers

    def _config(self) -> EmbeddingConfig:
        return EmbeddingConfig(
            model=self.model, loss=self.loss, dim=self.dim, window=self.window,
            epochs=self.epochs, negatives=self.negatives, lr_initial=self.lr_initial,
            lr_final=self.lr_final, noise_exponent=self.noise_exponent,
            seed=self.seed, workers=self.workers,
        )

    def fit(self, X, y=None):
        sentences = [[t if isinstance(t, EntityToken) else EntityToken.parse(t) for t in s] for s in X]
        self.vocabulary_ = build_vocabulary(sentences, self.min_count)
        self.model_ = train(sentences, self.vocabulary_, self._config())
        self.store_ = self.model_.store()
        return self

    def transform(self, X):
        check_is_fitted(self, "store_")
        return np.vstack([self.store_.vector(t) for t in X]) if len(X) else np.empty((0, self.dim))
