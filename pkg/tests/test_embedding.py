import io
import math
from functools import lru_cache
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from reprrec import _kernels
from reprrec.corpus import CorpusError, Vocabulary, build_vocabulary, movie, tag, user
from reprrec.embedding import (EmbeddingConfig, HuffmanTree, NoiseTable, Word2VecEmbedder, cbow_hidden,
                               encode_corpus, exact_loss_and_grads, hs_loss_and_grads, init_model,
                               load_embeddings, log_sigmoid, ns_loss_and_grads, save_embeddings,
                               softmax_distribution, train)


def vocab_of(n, counts=None):
    counts = counts or [n - i for i in range(n)]
    return Vocabulary({tag(f"w{i:02d}"): c for i, c in enumerate(counts)})


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def fd_grad(f, x, eps=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = f()
        x[idx] = old - eps
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * eps)
    return g


def scatter(rows, shape):
    out = np.zeros(shape)
    for r, g in rows:
        out[r] += g
    return out


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_distribution([0, 0, 0, 0]), [0.25] * 4)

    def test_two(self):
        e = math.e
        np.testing.assert_allclose(softmax_distribution([1, 0]), [e / (e + 1), 1 / (e + 1)], rtol=1e-15)

    def test_large(self):
        np.testing.assert_array_equal(softmax_distribution([1000, 1000]), [0.5, 0.5])

    @given(st.lists(st.floats(-1000, 1000), min_size=1, max_size=50))
    def test_normalized(self, a):
        p = softmax_distribution(a)
        assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-9


class TestCbowHidden:
    def test_single(self):
        W = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(cbow_hidden([2], W), W[2])

    def test_symmetric(self):
        W = np.array([[1.0, -2.0], [-1.0, 2.0]])
        np.testing.assert_array_equal(cbow_hidden([0, 1], W), [0.0, 0.0])

    def test_three(self):
        W = np.array([[0.3, 0.0], [0.0, 0.6], [0.6, 0.3]])
        np.testing.assert_allclose(cbow_hidden([0, 1, 2], W), [0.3, 0.3])

    def test_empty(self):
        with pytest.raises(ValueError):
            cbow_hidden([], np.zeros((2, 2)))


class TestNegativeSampling:
    def test_zero_output_rows(self, rng):
        noise = NoiseTable([5, 4, 3, 2, 1])
        for K in (1, 3, 7):
            loss, _, _ = ns_loss_and_grads(rng.normal(size=4), 0, np.zeros((5, 4)), noise, K, rng)
            assert loss == pytest.approx((K + 1) * math.log(2), abs=1e-15)

    def test_asymptote(self):
        O = np.array([[1.0, 0.0], [-1.0, 0.0]])
        loss, _, _ = ns_loss_and_grads(np.array([100.0, 0.0]), 0, O, negatives=[1])
        assert loss < 1e-40

    def test_negatives_exclude_target(self, rng):
        noise = NoiseTable([100, 1, 1])
        loss, _, rows = ns_loss_and_grads(np.ones(2), 0, np.zeros((3, 2)), noise, 20, rng)
        assert {r for r, _ in rows} <= {0, 1, 2}
        from reprrec.embedding import draw_negatives
        assert 0 not in draw_negatives(noise, 0, 500, rng)

    def test_gradients(self, rng):
        for _ in range(20):
            V, R = 7, 5
            h, O = rng.normal(scale=0.5, size=R), rng.normal(scale=0.5, size=(V, R))
            negs = rng.integers(1, V, size=4)
            _, gh, rows = ns_loss_and_grads(h, 0, O, negatives=negs)
            f = lambda: ns_loss_and_grads(h, 0, O, negatives=negs)[0]
            assert rel_err(gh, fd_grad(f, h)) < 1e-4
            assert rel_err(scatter(rows, O.shape), fd_grad(f, O)) < 1e-4


class TestNoiseTable:
    def test_probabilities(self):
        counts = [10, 5, 1]
        w = np.array(counts, float) ** 0.75
        t = NoiseTable(counts)
        np.testing.assert_allclose(t.probabilities, w / w.sum(), rtol=1e-15)
        assert abs(t.probabilities.sum() - 1) < 1e-12 and np.all(t.probabilities > 0)

    def test_numpy_sampler(self, rng):
        t = NoiseTable([50, 20, 10, 5, 1])
        freq = np.bincount(t.sample(200_000, rng), minlength=5) / 200_000
        assert np.max(np.abs(freq - t.probabilities)) < 0.01


class TestHuffman:
    @staticmethod
    @lru_cache(maxsize=None)
    def optimum(weights):
        # minimum total merge cost over every merge order
        if len(weights) == 1:
            return 0
        best = None
        for i, j in combinations(range(len(weights)), 2):
            merged = weights[i] + weights[j]
            rest = tuple(sorted([w for n, w in enumerate(weights) if n not in (i, j)] + [merged]))
            cost = merged + TestHuffman.optimum(rest)
            best = cost if best is None else min(best, cost)
        return best

    @given(st.lists(st.integers(1, 40), min_size=2, max_size=8))
    def test_optimal_and_prefix_free(self, counts):
        tree = HuffmanTree(counts)
        assert tree.weighted_length(counts) == self.optimum(tuple(sorted(counts)))
        codes = ["".join(map(str, c)) for c in tree.codes]
        for a in codes:
            for b in codes:
                if a is not b:
                    assert not b.startswith(a)
        assert all(len(c) == len(p) for c, p in zip(tree.codes, tree.paths))
        assert tree.n_internal == len(counts) - 1
        assert all(p[0] == len(counts) - 2 for p in tree.paths)

    def test_deterministic_ties(self):
        a, b = HuffmanTree([1, 1, 1, 1]), HuffmanTree([1, 1, 1, 1])
        assert a.codes == b.codes and a.paths == b.paths

    def test_two_leaves_zero_node(self):
        tree = HuffmanTree([3, 1])
        loss, _, _ = hs_loss_and_grads(np.array([0.3, -0.2]), 0, tree, np.zeros((1, 2)))
        assert loss == pytest.approx(math.log(2), abs=1e-15)

    def test_leaf_probabilities_sum_to_one(self, rng):
        tree = HuffmanTree([8, 7, 6, 5, 4, 3, 2, 1])
        for _ in range(20):
            h, N = rng.normal(size=4), rng.normal(size=(7, 4))
            total = sum(math.exp(-hs_loss_and_grads(h, w, tree, N)[0]) for w in range(8))
            assert abs(total - 1) < 1e-12

    def test_gradients(self, rng):
        tree = HuffmanTree([9, 5, 4, 4, 2, 1])
        for _ in range(20):
            h, N = rng.normal(scale=0.5, size=4), rng.normal(scale=0.5, size=(5, 4))
            target = int(rng.integers(6))
            _, gh, rows = hs_loss_and_grads(h, target, tree, N)
            f = lambda: hs_loss_and_grads(h, target, tree, N)[0]
            assert rel_err(gh, fd_grad(f, h)) < 1e-4
            assert rel_err(scatter(rows, N.shape), fd_grad(f, N)) < 1e-4


def test_exact_gradients(rng):
    for _ in range(20):
        h, O = rng.normal(size=4), rng.normal(size=(6, 4))
        _, gh, G = exact_loss_and_grads(h, 2, O)
        f = lambda: exact_loss_and_grads(h, 2, O)[0]
        assert rel_err(gh, fd_grad(f, h)) < 1e-4
        assert rel_err(G, fd_grad(f, O)) < 1e-4


def test_exact_loss_matches_softmax(rng):
    h, O = rng.normal(size=3), rng.normal(size=(5, 3))
    assert exact_loss_and_grads(h, 1, O)[0] == pytest.approx(-math.log(softmax_distribution(O @ h)[1]))


def test_exact_cbow_full_batch_descent(rng):
    V, R, lr = 6, 3, 1e-2
    W, O = rng.normal(scale=0.5, size=(V, R)), rng.normal(scale=0.5, size=(V, R))
    examples = [([1, 2], 0), ([0, 3], 4), ([5], 2), ([2, 4, 5], 1), ([0, 1], 3)]

    def step():
        loss, gW, gO = 0.0, np.zeros_like(W), np.zeros_like(O)
        for ctx, t in examples:
            l, gh, G = exact_loss_and_grads(cbow_hidden(ctx, W), t, O)
            loss += l
            gO += G
            for c in ctx:
                gW[c] += gh / len(ctx)
        return loss, gW, gO

    losses = []
    for _ in range(11):
        loss, gW, gO = step()
        losses.append(loss)
        W -= lr * gW
        O -= lr * gO
    assert all(b < a for a, b in zip(losses, losses[1:]))


class TestInit:
    def test_bounds_and_zero_outputs(self):
        m = init_model(vocab_of(10), EmbeddingConfig(dim=4, seed=3))
        assert np.all(np.abs(m.input_vectors) <= 0.125) and not np.all(m.input_vectors == 0)
        assert np.all(m.output_vectors == 0)

    def test_deterministic(self):
        a = init_model(vocab_of(10), EmbeddingConfig(dim=4, seed=3))
        b = init_model(vocab_of(10), EmbeddingConfig(dim=4, seed=3))
        np.testing.assert_array_equal(a.input_vectors, b.input_vectors)

    def test_hs_nodes(self):
        m = init_model(vocab_of(5), EmbeddingConfig(dim=4, loss="hs"))
        assert m.node_vectors.shape == (4, 4) and np.all(m.node_vectors == 0)

    def test_rejects_tiny_vocab(self):
        with pytest.raises(ValueError):
            init_model(vocab_of(1), EmbeddingConfig())

    def test_exact_guard(self):
        with pytest.raises(ValueError, match="exact"):
            init_model(vocab_of(10_001, [1] * 10_001), EmbeddingConfig(dim=2, loss="exact"))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EmbeddingConfig(lr_initial=0.01, lr_final=0.1)
        assert EmbeddingConfig(model="cbow").lr_initial == 0.05
        assert EmbeddingConfig(model="sg").lr_initial == 0.025


def reference_train(sentences, vocab, config):
    """Plain-Python replay of the training loop built on the loss/gradient
    functions, consuming noise draws in the kernel's order."""
    model = init_model(vocab, config)
    W = model.input_vectors.copy()
    out = model.node_vectors if model.tree is not None else model.output_vectors
    O = out.copy()
    tokens, offsets = encode_corpus(sentences, vocab)
    seed = np.random.SeedSequence(config.seed).generate_state(1, dtype=np.uint64)[0]
    draws = iter(_kernels.sample_noise(model.noise.cdf, seed, 100_000)) if model.noise else None
    total = len(tokens) * config.epochs
    done = 0

    def grads(h, target):
        if config.loss.value == "ns":
            negs = []
            while len(negs) < config.negatives:
                w = int(next(draws))
                if w != target:
                    negs.append(w)
            _, gh, rows = ns_loss_and_grads(h, target, O, negatives=negs)
            return gh, scatter(rows, O.shape)
        if config.loss.value == "hs":
            _, gh, rows = hs_loss_and_grads(h, target, model.tree, O)
            return gh, scatter(rows, O.shape)
        _, gh, G = exact_loss_and_grads(h, target, O)
        return gh, G

    lr0, lr1 = config.lr_initial, config.lr_final
    for _ in range(config.epochs):
        for s in range(len(offsets) - 1):
            lo, hi = offsets[s], offsets[s + 1]
            for pos in range(lo, hi):
                lr = lr0 - (lr0 - lr1) * (done / total)
                done += 1
                ctx = [c for c in range(max(lo, pos - config.window), min(hi, pos + config.window + 1)) if c != pos]
                if config.model.value == "cbow":
                    gh, gO = grads(cbow_hidden(tokens[ctx], W), tokens[pos])
                    O -= lr * gO
                    for c in ctx:
                        W[tokens[c]] -= lr * gh
                else:
                    for c in ctx:
                        gh, gO = grads(W[tokens[pos]].copy(), tokens[c])
                        O -= lr * gO
                        W[tokens[pos]] -= lr * gh
    return W, O


@pytest.mark.parametrize("arch", ["cbow", "sg"])
@pytest.mark.parametrize("loss", ["ns", "hs", "exact"])
def test_kernel_matches_reference(arch, loss):
    sentences = [[user(1), movie(1), tag("a"), tag("b")], [user(2), movie(1), tag("a")],
                 [user(1), movie(2), tag("c"), tag("b"), tag("d")], [user(3), movie(2)]]
    vocab = build_vocabulary(sentences)
    config = EmbeddingConfig(model=arch, loss=loss, dim=5, window=2, epochs=3, negatives=3, seed=11,
                             lr_initial=0.2, lr_final=0.01)
    model = train(sentences, vocab, config)
    W, O = reference_train(sentences, vocab, config)
    trained_out = model.node_vectors if loss == "hs" else model.output_vectors
    np.testing.assert_allclose(model.input_vectors, W, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(trained_out, O, rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("arch,loss", [("sg", "ns"), ("cbow", "ns"), ("sg", "hs"), ("cbow", "hs")])
def test_single_sentence_touches_only_expected_rows(arch, loss):
    vocab = vocab_of(30)
    a, b = vocab.tokens[3], vocab.tokens[17]
    config = EmbeddingConfig(model=arch, loss=loss, dim=4, epochs=1, negatives=2, seed=5)
    before = init_model(vocab, config)
    after = train([[a, b]], vocab, config)
    changed_in = set(np.flatnonzero(np.any(before.input_vectors != after.input_vectors, axis=1)))
    assert changed_in <= {3, 17}
    if loss == "ns":
        changed_out = np.flatnonzero(np.any(after.output_vectors != 0, axis=1))
        assert 0 < len(changed_out) <= 2 * (config.negatives + 1)
    else:
        allowed = set(after.tree.paths[3]) | set(after.tree.paths[17])
        assert set(np.flatnonzero(np.any(after.node_vectors != 0, axis=1))) <= allowed


def test_kernel_noise_fidelity():
    counts = [50, 30, 20, 10, 8, 5, 3, 2, 1, 1]
    table = NoiseTable(counts)
    draws = _kernels.sample_noise(table.cdf, 2024, 1_000_000)
    freq = np.bincount(draws, minlength=10) / 1e6
    assert np.max(np.abs(freq - table.probabilities)) < 0.01


def test_first_ns_loss_at_init():
    vocab = vocab_of(6)
    m = init_model(vocab, EmbeddingConfig(dim=4, negatives=5))
    loss, _, _ = ns_loss_and_grads(m.input_vectors[0], 1, m.output_vectors, m.noise, 5, np.random.default_rng(0))
    assert loss == pytest.approx(6 * math.log(2))


class TestTrain:
    sentences = [[user(i % 3), movie(i % 4), tag(f"t{i % 5}")] for i in range(30)]

    def test_epochs_zero_is_init(self):
        vocab = build_vocabulary(self.sentences)
        config = EmbeddingConfig(dim=8, epochs=0, seed=4)
        np.testing.assert_array_equal(train(self.sentences, vocab, config).input_vectors,
                                      init_model(vocab, config).input_vectors)

    def test_deterministic(self):
        vocab = build_vocabulary(self.sentences)
        config = EmbeddingConfig(dim=8, epochs=3, seed=4)
        a, b = train(self.sentences, vocab, config), train(self.sentences, vocab, config)
        assert a.input_vectors.tobytes() == b.input_vectors.tobytes()

    def test_multi_worker_runs(self):
        vocab = build_vocabulary(self.sentences)
        m = train(self.sentences, vocab, EmbeddingConfig(dim=8, epochs=3, workers=3))
        assert np.all(np.isfinite(m.input_vectors))

    def test_no_usable_sentence(self):
        vocab = Vocabulary({user(1): 1, movie(1): 1})
        with pytest.raises(CorpusError):
            train([[user(1)], [movie(2), tag("x")]], vocab, EmbeddingConfig(dim=2))


@pytest.mark.parametrize("loss", ["ns", "exact"])
def test_two_cluster_separation(loss):
    rng = np.random.default_rng(0)
    clusters = [[tag(f"a{i}") for i in range(10)], [tag(f"b{i}") for i in range(10)]]
    sentences = [list(rng.choice(clusters[n % 2], size=5, replace=False)) for n in range(400)]
    vocab = build_vocabulary(sentences)
    store = train(sentences, vocab, EmbeddingConfig(dim=16, epochs=30, loss=loss, seed=2)).store()
    intra, inter = [], []
    for i, x in enumerate(vocab.tokens):
        for y in vocab.tokens[i + 1:]:
            (intra if x.raw[0] == y.raw[0] else inter).append(store.similarity(x, y))
    assert np.mean(intra) - np.mean(inter) >= 0.2


class TestSerialization:
    def test_round_trip(self, rng):
        vocab = Vocabulary({user(1): 3, movie(2): 2, tag("two words"): 1})
        m = init_model(vocab, EmbeddingConfig(dim=5))
        m.input_vectors[:] = rng.normal(size=(3, 5))
        buf = io.StringIO()
        save_embeddings(m, buf)
        assert buf.getvalue().splitlines()[0] == "3 5"
        store = load_embeddings(buf.getvalue())
        assert store.tokens == vocab.tokens
        np.testing.assert_allclose(store.vectors, m.input_vectors, rtol=0, atol=1e-8)
        for i in range(3):
            v = store.vectors[i]
            assert v @ m.input_vectors[i] / np.linalg.norm(v) / np.linalg.norm(m.input_vectors[i]) > 1 - 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(CorpusError):
            load_embeddings("2 3\nu:1 1 2 3 4\nu:2 1 2 3\n")

    def test_duplicate(self):
        with pytest.raises(CorpusError, match="duplicate"):
            load_embeddings("2 2\nu:1 1 2\nu:1 3 4\n")

    def test_single_token_is_query_only(self):
        store = load_embeddings("1 2\nm:1 0.5 0.25\n")
        assert store.query_only and len(store) == 1

    def test_significant_digits(self):
        m = init_model(vocab_of(2), EmbeddingConfig(dim=1))
        m.input_vectors[:] = [[1 / 3], [2 / 3]]
        buf = io.StringIO()
        save_embeddings(m, buf)
        assert len(buf.getvalue().splitlines()[1].split()[1].replace(".", "").lstrip("0")) >= 9


def test_estimator_api():
    est = Word2VecEmbedder(dim=6, epochs=2, seed=3)
    assert clone(est).get_params() == est.get_params()
    sentences = [["u:1", "m:1", "t:x"], ["u:2", "m:1"], ["u:1", "m:2", "t:x"]]
    est.fit(sentences)
    X = est.transform([movie(1), user(2)])
    assert X.shape == (2, 6)
    np.testing.assert_array_equal(X[0], est.store_.vector(movie(1)))


def test_log_sigmoid_stable():
    assert np.isfinite(log_sigmoid(-1000.0)) and log_sigmoid(1000.0) == 0.0
