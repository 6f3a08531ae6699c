"""Sentence encoder: embeddings -> Bi-GRU -> gated syntactic GCN -> token attention.

Parameters live in a flat ``dict[str, Tensor]``:

* ``word_emb`` (V, k), ``pos_subj`` / ``pos_obj`` (2*max_position+1, p)
* ``gru.{fw,bw}.{W_z,W_r,W_h}`` (k+2p, d_gru/2), ``U_*`` (d_gru/2, d_gru/2), ``b_*`` (d_gru/2,)
* ``gcn.{layer}.{fwd,bwd,self}.W`` (d_in, d_gcn), ``.b`` (d_gcn,), ``.gate_w`` (d_in,), ``.gate_b`` (1,)
* ``token_query`` (d_gru + d_gcn,)

Weight matrices are stored input-major, so a message is ``h @ W``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffmath as dm
from .corpus import SentenceInstance, Vocab, position_ids
from .diffmath import Tensor
from .errors import ConfigError, DimensionError

FORWARD, BACKWARD, SELF = "fwd", "bwd", "self"
LABELS = (FORWARD, BACKWARD, SELF)


@dataclass(frozen=True)
class EncoderDims:
    word_dim: int = 50
    pos_dim: int = 5
    d_gru: int = 64
    d_gcn: int = 32
    n_gcn_layers: int = 1
    max_position: int = 60

    def validate(self) -> None:
        if self.d_gru % 2:
            raise ConfigError(f"d_gru must be even (two GRU directions), got {self.d_gru}")
        if min(self.word_dim, self.pos_dim, self.d_gru, self.d_gcn, self.n_gcn_layers, self.max_position) < 1:
            raise ConfigError("encoder dimensions must be positive")

    @property
    def token_width(self) -> int:
        return self.word_dim + 2 * self.pos_dim

    @property
    def sentence_width(self) -> int:
        return self.d_gru + self.d_gcn

    @property
    def n_positions(self) -> int:
        return 2 * self.max_position + 1


@dataclass(frozen=True)
class LabeledGraph:
    """Dependency graph after adding inverse edges and self-loops.

    ``edges`` holds ``(source, target, label)`` triples sorted by source,
    target and label position.
    """

    n_nodes: int
    edges: tuple[tuple[int, int, str], ...]

    def adjacency(self, label: str) -> np.ndarray:
        """``A[v, u] = 1`` for every edge ``(u, v, label)``; row v collects v's incoming messages."""
        a = np.zeros((self.n_nodes, self.n_nodes))
        for u, v, lab in self.edges:
            if lab == label:
                a[v, u] = 1.0
        return a


def build_syntactic_graph(dep_edges: Sequence[tuple[int, int]], m: int) -> LabeledGraph:
    triples = set()
    for head, dep in dep_edges:
        if not (0 <= head < m and 0 <= dep < m):
            raise IndexError(f"dependency edge ({head}, {dep}) has an endpoint outside [0, {m})")
        triples.add((head, dep, FORWARD))
        triples.add((dep, head, BACKWARD))
    triples.update((i, i, SELF) for i in range(m))
    order = {lab: i for i, lab in enumerate(LABELS)}
    return LabeledGraph(m, tuple(sorted(triples, key=lambda e: (e[0], e[1], order[e[2]]))))


@dataclass
class EncodedSentence:
    """Id-level view of a sentence plus its cached graph and side information."""

    word_ids: list[int]
    subj_pos: list[int]
    obj_pos: list[int]
    graph: LabeledGraph
    adjacency: dict[str, Tensor]
    matched: tuple[int, ...] = ()

    @property
    def length(self) -> int:
        return len(self.word_ids)


def encode_ids(sentence: SentenceInstance, vocab: Vocab, max_position: int,
               matched: Sequence[int] = ()) -> EncodedSentence:
    m = sentence.length
    graph = build_syntactic_graph(sentence.dep_edges, m)
    return EncodedSentence(
        word_ids=vocab.ids(sentence.tokens),
        subj_pos=position_ids(m, sentence.subj_span, max_position),
        obj_pos=position_ids(m, sentence.obj_span, max_position),
        graph=graph,
        adjacency=adjacency_tensors(graph),
        matched=tuple(matched),
    )


def init_encoder_params(dims: EncoderDims, vocab_size: int, rng: np.random.Generator,
                        pretrained: np.ndarray | None = None) -> dict[str, Tensor]:
    dims.validate()

    def uniform(shape, fan):
        bound = 1.0 / np.sqrt(fan)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    k, h = dims.token_width, dims.d_gru // 2
    params: dict[str, Tensor] = {}
    if pretrained is not None:
        if pretrained.shape != (vocab_size, dims.word_dim):
            raise DimensionError(
                f"pretrained table {pretrained.shape} does not match ({vocab_size}, {dims.word_dim})"
            )
        params["word_emb"] = Tensor(pretrained.copy(), requires_grad=True)
    else:
        params["word_emb"] = uniform((vocab_size, dims.word_dim), dims.word_dim)
    params["pos_subj"] = uniform((dims.n_positions, dims.pos_dim), dims.pos_dim)
    params["pos_obj"] = uniform((dims.n_positions, dims.pos_dim), dims.pos_dim)
    for d in ("fw", "bw"):
        for g in ("z", "r", "h"):
            params[f"gru.{d}.W_{g}"] = uniform((k, h), k)
            params[f"gru.{d}.U_{g}"] = uniform((h, h), h)
            params[f"gru.{d}.b_{g}"] = uniform((h,), h)
    d_in = dims.d_gru
    for layer in range(dims.n_gcn_layers):
        for lab in LABELS:
            p = f"gcn.{layer}.{lab}"
            params[f"{p}.W"] = uniform((d_in, dims.d_gcn), d_in)
            params[f"{p}.b"] = uniform((dims.d_gcn,), d_in)
            params[f"{p}.gate_w"] = uniform((d_in,), d_in)
            params[f"{p}.gate_b"] = uniform((1,), d_in)
        d_in = dims.d_gcn
    params["token_query"] = uniform((dims.sentence_width,), dims.sentence_width)
    return params


def embed_tokens(sent: EncodedSentence, params: dict[str, Tensor]) -> Tensor:
    """Rows are ``[word; subject position; object position]``."""
    n_pos = params["pos_subj"].shape[0]
    for i in (*sent.subj_pos, *sent.obj_pos):
        if not 0 <= i < n_pos:
            raise IndexError(f"position id {i} outside the {n_pos}-row position table")
    return dm.concat(
        [
            dm.gather_rows(params["word_emb"], sent.word_ids),
            dm.gather_rows(params["pos_subj"], sent.subj_pos),
            dm.gather_rows(params["pos_obj"], sent.obj_pos),
        ],
        axis=1,
    )


def _gru_direction(H: Tensor, params: dict[str, Tensor], prefix: str, reverse: bool) -> list[Tensor]:
    m = H.shape[0]
    h_dim = params[f"{prefix}.U_z"].shape[0]
    xz = dm.add(dm.matmul(H, params[f"{prefix}.W_z"]), params[f"{prefix}.b_z"])
    xr = dm.add(dm.matmul(H, params[f"{prefix}.W_r"]), params[f"{prefix}.b_r"])
    xh = dm.add(dm.matmul(H, params[f"{prefix}.W_h"]), params[f"{prefix}.b_h"])
    U_z, U_r, U_h = params[f"{prefix}.U_z"], params[f"{prefix}.U_r"], params[f"{prefix}.U_h"]
    h = Tensor(np.zeros(h_dim))
    out: list[Tensor | None] = [None] * m
    steps = range(m - 1, -1, -1) if reverse else range(m)
    for t in steps:
        z = dm.sigmoid(dm.add(dm.take_row(xz, t), dm.matmul(h, U_z)))
        r = dm.sigmoid(dm.add(dm.take_row(xr, t), dm.matmul(h, U_r)))
        cand = dm.tanh(dm.add(dm.take_row(xh, t), dm.matmul(dm.mul(r, h), U_h)))
        # (1 - z) * h + z * cand
        h = dm.add(h, dm.mul(z, dm.sub(cand, h)))
        out[t] = h
    return out  # type: ignore[return-value]


def bi_gru(H: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Forward and backward GRU states concatenated per token, shape (m, d_gru)."""
    if H.ndim != 2 or H.shape[0] < 1:
        raise DimensionError(f"bi_gru expects an (m, width) matrix, got {H.shape}")
    fw = _gru_direction(H, params, "gru.fw", reverse=False)
    bw = _gru_direction(H, params, "gru.bw", reverse=True)
    return dm.concat([dm.stack(fw), dm.stack(bw)], axis=1)


def adjacency_tensors(graph: LabeledGraph) -> dict[str, Tensor]:
    return {lab: Tensor(graph.adjacency(lab)) for lab in LABELS}


def gcn_layer(H_in: Tensor, graph: LabeledGraph | dict[str, Tensor], params: dict[str, Tensor],
              layer: int = 0) -> Tensor:
    """One edge-gated GCN layer over the three direction labels.

    ``h_out[v] = relu(sum over edges (u, v, L) of g_u,L * (h_in[u] @ W_L + b_L))``
    with ``g_u,L = sigmoid(h_in[u] . gate_w_L + gate_b_L)``.
    """
    adjacency = adjacency_tensors(graph) if isinstance(graph, LabeledGraph) else graph
    m, d = H_in.shape
    total = None
    for lab in LABELS:
        p = f"gcn.{layer}.{lab}"
        if params[f"{p}.W"].shape[0] != d:
            raise DimensionError(f"gcn layer {layer}: input width {d} does not match {p}.W {params[f'{p}.W'].shape}")
        A = adjacency[lab]
        if A.shape != (m, m):
            raise DimensionError(f"gcn layer {layer}: adjacency {A.shape} for {m} nodes")
        msg = dm.add(dm.matmul(H_in, params[f"{p}.W"]), params[f"{p}.b"])
        gate = dm.sigmoid(dm.add(dm.reshape(dm.matmul(H_in, params[f"{p}.gate_w"]), (m, 1)), params[f"{p}.gate_b"]))
        agg = dm.matmul(A, dm.mul(msg, gate))
        total = agg if total is None else dm.add(total, agg)
    return dm.relu(total)


def encode_sentence(sent: EncodedSentence, params: dict[str, Tensor], n_gcn_layers: int,
                    use_gcn: bool = True) -> tuple[Tensor, Tensor]:
    """Return the sentence vector ``s`` (d_gru + d_gcn,) and token attention ``alpha`` (m,).

    With ``use_gcn=False`` the GCN block is a constant zero block of the same width.
    """
    H = embed_tokens(sent, params)
    h_gru = bi_gru(H, params)
    d_gcn = params["gcn.0.self.b"].shape[0]
    if use_gcn:
        h = h_gru
        for layer in range(n_gcn_layers):
            h = gcn_layer(h, sent.adjacency, params, layer)
        h_gcn = h
    else:
        h_gcn = Tensor(np.zeros((sent.length, d_gcn)))
    h_cat = dm.concat([h_gru, h_gcn], axis=1)
    alpha = dm.softmax_rows(dm.matmul(h_cat, params["token_query"]))
    return dm.matmul(alpha, h_cat), alpha
