"""Independent brute-force reference implementations.

Everything here is written as plain loops over numpy scalars/rows, without
touching the package's tensor engine, so tests can compare the two routes.
"""

import math

import numpy as np

RRELU_MEAN_SLOPE = (0.125 + 1.0 / 3.0) / 2.0


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


def conv1d_loops(x, kernels, padding):
    """Sliding-window cross-correlation; x (C, L), kernels (K, C, w)."""
    channels, length = x.shape
    num_k, _, width = kernels.shape
    xp = np.zeros((channels, length + 2 * padding))
    xp[:, padding:padding + length] = x
    out_len = length + 2 * padding - width + 1
    out = np.zeros((num_k, out_len))
    for k in range(num_k):
        for pos in range(out_len):
            acc = 0.0
            for c in range(channels):
                for j in range(width):
                    acc += xp[c, pos + j] * kernels[k, c, j]
            out[k, pos] = acc
    return out


def rgcn_layer_loops(facts, h, rel, w1, w2, w3, eval_slope=RRELU_MEAN_SLOPE):
    """Per-edge aggregation for one GCN layer in eval mode.

    facts: iterable of (s, r, o); embeddings as rows; W applied as x @ W.
    """
    num_entities = h.shape[0]
    in_deg = np.zeros(num_entities)
    for (_, _, o) in facts:
        in_deg[o] += 1
    agg = np.zeros_like(h)
    for (s, r, o) in facts:
        agg[o] += (h[s] + rel[r]) @ w1
    out = np.zeros_like(h)
    for i in range(num_entities):
        if in_deg[i] > 0:
            pre = agg[i] / in_deg[i] + h[i] @ w2
        else:
            pre = h[i] @ w3
        out[i] = np.where(pre >= 0, pre, eval_slope * pre)
    return out


def static_embeddings_loops(edges, h0, weights, num_entities):
    """edges: (entity, relation, property) triples; h0 rows indexed with
    property ids offset by num_entities; 1-layer mean + relu + row norm."""
    acc = np.zeros((num_entities, h0.shape[1]))
    count = np.zeros(num_entities)
    for (i, r, j) in edges:
        acc[i] += h0[num_entities + j] @ weights[r]
        count[i] += 1
    out = np.zeros_like(acc)
    for i in range(num_entities):
        pre = acc[i] / count[i]
        row = np.maximum(pre, 0.0)
        norm = np.linalg.norm(row)
        out[i] = row / norm if norm > 1e-12 else row
    return out


def gru_rows(h_prev, x, p):
    """Rowwise GRU with gates z (update), r (reset), candidate tanh; gate 0
    carries the previous row.  p maps names wz..bn to arrays."""
    out = np.zeros_like(h_prev)
    for i in range(h_prev.shape[0]):
        hi, xi = h_prev[i], x[i]
        z = _sigmoid(xi @ p["wz"] + hi @ p["uz"] + p["bz"])
        r = _sigmoid(xi @ p["wr"] + hi @ p["ur"] + p["br"])
        n = np.tanh(xi @ p["wn"] + (r * hi) @ p["un"] + p["bn"])
        out[i] = (1.0 - z) * hi + z * n
    return out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def normalize_rows_np(x, eps=1e-12):
    out = x.copy()
    for i in range(x.shape[0]):
        n = np.linalg.norm(x[i])
        if n > eps:
            out[i] = x[i] / n
    return out


def rank_sorted(probs, answer):
    """Sort-based pessimistic rank: position of the answer's tie group plus
    the ceiling of half the group size."""
    order = np.sort(np.asarray(probs))[::-1]
    p = probs[answer]
    first = int(np.searchsorted(-order, -p))  # index of first tie
    ties = int((order == p).sum())
    return math.ceil(first + (ties + 1) / 2.0)


def metrics_sorted(rank_lists):
    """MRR and hits from explicit (probs, answer) pairs via rank_sorted."""
    ranks = np.array([rank_sorted(p, a) for p, a in rank_lists], dtype=float)
    return {
        "mrr": float((1.0 / ranks).mean()),
        "hits1": float((ranks <= 1).mean()),
        "hits3": float((ranks <= 3).mean()),
        "hits10": float((ranks <= 10).mean()),
    }


def bce_scalar(probs, labels, eps=1e-10):
    """Full binary cross-entropy, scalar loops, mean over rows."""
    total = 0.0
    rows, cols = probs.shape
    for i in range(rows):
        for j in range(cols):
            p = min(max(probs[i, j], eps), 1.0 - eps)
            y = labels[i, j]
            total -= y * math.log(p) + (1.0 - y) * math.log(1.0 - p)
    return total / rows


def adam_scalar(w, g, m, v, step, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update on scalars; returns (w, m, v)."""
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g * g
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    return w - lr * m_hat / (math.sqrt(v_hat) + eps), m, v


def finite_difference(loss_fn, arrays, h=1e-5):
    """Central finite differences of loss_fn() w.r.t. each array, in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = loss_fn()
            flat[i] = orig - h
            minus = loss_fn()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads
