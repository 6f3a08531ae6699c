"""Straight-line numpy/scalar reference implementations used as test oracles.

Nothing here touches the autodiff tape; loops are written out explicitly
so that they share no code path with the library.
"""

from __future__ import annotations

import math

import numpy as np


def sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def matmul_loops(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i][t] * b[t][j]
            out[i][j] = acc
    return out


def gru_direction(X: np.ndarray, P: dict, prefix: str, reverse: bool) -> np.ndarray:
    """Scalar-loop GRU with h0 = 0; weights stored input-major like the library."""
    W = {g: P[f"{prefix}.W_{g}"] for g in "zrh"}
    U = {g: P[f"{prefix}.U_{g}"] for g in "zrh"}
    b = {g: P[f"{prefix}.b_{g}"] for g in "zrh"}
    m, k = X.shape
    hd = U["z"].shape[0]
    h = [0.0] * hd
    out = np.zeros((m, hd))
    steps = range(m - 1, -1, -1) if reverse else range(m)
    for t in steps:
        x = X[t]
        z, r = [0.0] * hd, [0.0] * hd
        for j in range(hd):
            az = b["z"][j] + sum(x[i] * W["z"][i, j] for i in range(k)) + sum(h[i] * U["z"][i, j] for i in range(hd))
            ar = b["r"][j] + sum(x[i] * W["r"][i, j] for i in range(k)) + sum(h[i] * U["r"][i, j] for i in range(hd))
            z[j], r[j] = sigmoid(az), sigmoid(ar)
        new = [0.0] * hd
        for j in range(hd):
            ah = b["h"][j] + sum(x[i] * W["h"][i, j] for i in range(k))
            ah += sum(r[i] * h[i] * U["h"][i, j] for i in range(hd))
            cand = math.tanh(ah)
            new[j] = (1.0 - z[j]) * h[j] + z[j] * cand
        h = new
        out[t] = h
    return out


def bi_gru(X: np.ndarray, P: dict) -> np.ndarray:
    return np.concatenate([gru_direction(X, P, "gru.fw", False), gru_direction(X, P, "gru.bw", True)], axis=1)


def gcn_layer(H: np.ndarray, triples, P: dict, layer: int) -> np.ndarray:
    """Explicit per-edge accumulation over (source, target, label) triples."""
    m = H.shape[0]
    d_out = P[f"gcn.{layer}.self.W"].shape[1]
    acc = np.zeros((m, d_out))
    for u, v, lab in triples:
        p = f"gcn.{layer}.{lab}"
        gate = sigmoid(float(np.dot(H[u], P[f"{p}.gate_w"])) + float(P[f"{p}.gate_b"][0]))
        acc[v] += gate * (H[u] @ P[f"{p}.W"] + P[f"{p}.b"])
    return np.maximum(acc, 0.0)


def triples_for(dep_edges, m):
    out = set()
    for h, d in dep_edges:
        out.add((h, d, "fwd"))
        out.add((d, h, "bwd"))
    out.update((i, i, "self") for i in range(m))
    return sorted(out)


def softmax(u: np.ndarray) -> np.ndarray:
    e = [math.exp(x - max(u)) for x in u]
    s = sum(e)
    return np.array([x / s for x in e])


def encode_sentence(word_ids, subj_pos, obj_pos, dep_edges, P: dict, n_layers: int, use_gcn: bool = True):
    m = len(word_ids)
    X = np.stack(
        [np.concatenate([P["word_emb"][w], P["pos_subj"][a], P["pos_obj"][b]]) for w, a, b in zip(word_ids, subj_pos, obj_pos)]
    )
    hg = bi_gru(X, P)
    if use_gcn:
        h = hg
        triples = triples_for(dep_edges, m)
        for layer in range(n_layers):
            h = gcn_layer(h, triples, P, layer)
    else:
        h = np.zeros((m, P["gcn.0.self.b"].shape[0]))
    hc = np.concatenate([hg, h], axis=1)
    u = np.array([float(np.dot(hc[i], P["token_query"])) for i in range(m)])
    alpha = softmax(u)
    s = np.zeros(hc.shape[1])
    for i in range(m):
        s += alpha[i] * hc[i]
    return s, alpha


def bag_forward(encoded_bag, P: dict, n_layers: int, flags=(True, True, True)):
    use_gcn, use_rel, use_type = flags
    rows = []
    for s in encoded_bag.sentences:
        vec, _ = encode_sentence(s.word_ids, s.subj_pos, s.obj_pos, [(u, v) for u, v, l in s.graph.edges if l == "fwd"],
                                 P, n_layers, use_gcn)
        rel = P["rel_emb"]
        if use_rel and s.matched:
            h_rel = sum(rel[i] for i in s.matched) / len(s.matched)
        else:
            h_rel = rel[-1]
        rows.append(np.concatenate([vec, h_rel]))
    scores = np.array([float(np.dot(r, P["bag_query"])) for r in rows])
    alpha = softmax(scores)
    B = sum(a * r for a, r in zip(alpha, rows))
    T = P["type_emb"]

    def types(ids):
        if not use_type or not ids:
            return T[-1]
        return sum(T[i] for i in ids) / len(ids)

    B_hat = np.concatenate([B, types(encoded_bag.subj_types), types(encoded_bag.obj_types)])
    logits = P["cls_W"] @ B_hat + P["cls_b"]
    return softmax(logits), alpha
