"""Compiled SGD kernels for CBOW / Skip-gram training.

Sentences arrive flattened: ``tokens`` holds every in-vocabulary index and
``offsets[s]:offsets[s+1]`` delimits sentence ``s``.  Randomness comes from
a splitmix64 stream held in a one-element uint64 array so results are
bit-reproducible for a fixed seed in single-worker mode.
"""
import numpy as np
from numba import njit

CBOW = 0
SKIPGRAM = 1

NEGATIVE_SAMPLING = 0
HIERARCHICAL_SOFTMAX = 1
EXACT_SOFTMAX = 2

_MASK53 = 2.0 ** -53


@njit(cache=True)
def _next_u64(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def next_uniform(state):
    return float(_next_u64(state) >> np.uint64(11)) * _MASK53


@njit(cache=True)
def draw_noise(cdf, state):
    """Inverse-CDF draw of one vocabulary index."""
    u = next_uniform(state) * cdf[-1]
    i = np.searchsorted(cdf, u, side="right")
    if i >= cdf.shape[0]:
        i = cdf.shape[0] - 1
    return i


@njit(cache=True)
def sample_noise(cdf, seed, n):
    state = np.array([np.uint64(seed)], dtype=np.uint64)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = draw_noise(cdf, state)
    return out


@njit(cache=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _ns_step(h, target, syn1, cdf, negatives, lr, state, neu1e, samples):
    """One negative-sampling update of output rows; accumulates the descent
    direction for ``h`` into ``neu1e``.  All scores use pre-update values."""
    dim = h.shape[0]
    samples[0] = target
    for k in range(1, negatives + 1):
        w = draw_noise(cdf, state)
        while w == target:
            w = draw_noise(cdf, state)
        samples[k] = w
    coef = np.empty(negatives + 1)
    for k in range(negatives + 1):
        row = samples[k]
        f = 0.0
        for d in range(dim):
            f += h[d] * syn1[row, d]
        label = 1.0 if k == 0 else 0.0
        coef[k] = lr * (label - _sigmoid(f))
    for k in range(negatives + 1):
        row = samples[k]
        g = coef[k]
        for d in range(dim):
            neu1e[d] += g * syn1[row, d]
    for k in range(negatives + 1):
        row = samples[k]
        g = coef[k]
        for d in range(dim):
            syn1[row, d] += g * h[d]


@njit(cache=True)
def _hs_step(h, target, syn1, codes, points, code_offsets, lr, neu1e):
    dim = h.shape[0]
    start = code_offsets[target]
    stop = code_offsets[target + 1]
    coef = np.empty(stop - start)
    for j in range(start, stop):
        node = points[j]
        f = 0.0
        for d in range(dim):
            f += h[d] * syn1[node, d]
        coef[j - start] = lr * (1.0 - codes[j] - _sigmoid(f))
    for j in range(start, stop):
        node = points[j]
        g = coef[j - start]
        for d in range(dim):
            neu1e[d] += g * syn1[node, d]
    for j in range(start, stop):
        node = points[j]
        g = coef[j - start]
        for d in range(dim):
            syn1[node, d] += g * h[d]


@njit(cache=True)
def _exact_step(h, target, syn1, lr, neu1e):
    vocab, dim = syn1.shape
    act = syn1 @ h
    m = act.max()
    p = np.exp(act - m)
    p /= p.sum()
    p[target] -= 1.0
    for w in range(vocab):
        g = -lr * p[w]
        for d in range(dim):
            neu1e[d] += g * syn1[w, d]
    for w in range(vocab):
        g = -lr * p[w]
        for d in range(dim):
            syn1[w, d] += g * h[d]


@njit(cache=True)
def _output_step(loss, h, target, syn1, cdf, negatives, codes, points, code_offsets, lr, state, neu1e, samples):
    if loss == NEGATIVE_SAMPLING:
        _ns_step(h, target, syn1, cdf, negatives, lr, state, neu1e, samples)
    elif loss == HIERARCHICAL_SOFTMAX:
        _hs_step(h, target, syn1, codes, points, code_offsets, lr, neu1e)
    else:
        _exact_step(h, target, syn1, lr, neu1e)


@njit(cache=True, nogil=True)
def train_shard(
    syn0, syn1, tokens, offsets, s_begin, s_end,
    arch, loss, window, negatives, cdf, codes, points, code_offsets,
    lr_initial, lr_final, epochs, seed,
):
    """Run ``epochs`` passes over sentences ``[s_begin, s_end)``.

    The learning rate decays linearly per processed target position, from
    ``lr_initial`` to ``lr_final`` over the shard's scheduled total.
    """
    dim = syn0.shape[1]
    state = np.array([np.uint64(seed)], dtype=np.uint64)
    h = np.empty(dim)
    neu1e = np.empty(dim)
    samples = np.empty(negatives + 1, dtype=np.int64)

    positions = offsets[s_end] - offsets[s_begin]
    total = positions * epochs
    done = 0
    for _ in range(epochs):
        for s in range(s_begin, s_end):
            lo = offsets[s]
            hi = offsets[s + 1]
            if hi - lo < 2:
                done += hi - lo
                continue
            for pos in range(lo, hi):
                lr = lr_initial - (lr_initial - lr_final) * (done / total)
                done += 1
                c_lo = max(lo, pos - window)
                c_hi = min(hi, pos + window + 1)
                target = tokens[pos]
                if arch == CBOW:
                    n_ctx = c_hi - c_lo - 1
                    for d in range(dim):
                        h[d] = 0.0
                        neu1e[d] = 0.0
                    for c in range(c_lo, c_hi):
                        if c != pos:
                            w = tokens[c]
                            for d in range(dim):
                                h[d] += syn0[w, d]
                    for d in range(dim):
                        h[d] /= n_ctx
                    _output_step(loss, h, target, syn1, cdf, negatives, codes, points,
                                 code_offsets, lr, state, neu1e, samples)
                    # every context row takes the full hidden-layer error
                    # (the conventional CBOW step, n_ctx times the mean's gradient)
                    for c in range(c_lo, c_hi):
                        if c != pos:
                            w = tokens[c]
                            for d in range(dim):
                                syn0[w, d] += neu1e[d]
                else:
                    for c in range(c_lo, c_hi):
                        if c == pos:
                            continue
                        for d in range(dim):
                            h[d] = syn0[target, d]
                            neu1e[d] = 0.0
                        _output_step(loss, h, tokens[c], syn1, cdf, negatives, codes, points,
                                     code_offsets, lr, state, neu1e, samples)
                        for d in range(dim):
                            syn0[target, d] += neu1e[d]
    return done
