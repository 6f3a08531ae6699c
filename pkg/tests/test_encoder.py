import numpy as np
import pytest

import reference as ref
from reside import diffmath as dm
from reside.corpus import SentenceInstance, Vocab
from reside.diffmath import Tensor
from reside.encoder import (
    EncoderDims,
    LABELS,
    LabeledGraph,
    adjacency_tensors,
    bi_gru,
    build_syntactic_graph,
    embed_tokens,
    encode_ids,
    encode_sentence,
    gcn_layer,
    init_encoder_params,
)
from reside.errors import ConfigError


def params_for(dims, vocab_size=10, seed=0):
    return init_encoder_params(dims, vocab_size, np.random.default_rng(seed))


def random_sentence(rng, m, vocab_size=10, max_position=5):
    tokens = tuple(f"w{int(i)}" for i in rng.integers(0, vocab_size - 2, size=m))
    edges = set()
    for _ in range(int(rng.integers(0, 2 * m))):
        u, v = (int(x) for x in rng.integers(0, m, size=2))
        if u != v:
            edges.add((u, v))
    subj = (0, 1)
    obj = (m - 1, m) if m > 1 else (0, 1)
    return SentenceInstance(tokens, subj, obj, tuple(sorted(edges)))


def vocab10():
    return Vocab(["<pad>", "<unk>", *[f"w{i}" for i in range(8)]])


# ---------------------------------------------------------------- graph

def test_graph_two_nodes():
    g = build_syntactic_graph([(0, 1)], 2)
    assert set(g.edges) == {(0, 1, "fwd"), (1, 0, "bwd"), (0, 0, "self"), (1, 1, "self")}


def test_graph_single_node():
    assert build_syntactic_graph([], 1).edges == ((0, 0, "self"),)


def test_graph_deduplicates():
    g = build_syntactic_graph([(0, 1), (0, 1)], 2)
    assert len(g.edges) == 2 * 1 + 2


def test_graph_edge_count_and_labels(rng):
    for _ in range(50):
        m = int(rng.integers(1, 9))
        sent = random_sentence(rng, m)
        g = build_syntactic_graph(sent.dep_edges, m)
        assert len(g.edges) == 2 * len(set(sent.dep_edges)) + m
        assert len(set(g.edges)) == len(g.edges)
        for u, v in sent.dep_edges:
            assert (u, v, "fwd") in g.edges and (v, u, "bwd") in g.edges


def test_graph_rejects_bad_endpoint():
    with pytest.raises(IndexError):
        build_syntactic_graph([(0, 2)], 2)


# ---------------------------------------------------------------- embed_tokens

def test_embed_shape():
    dims = EncoderDims(word_dim=2, pos_dim=1, d_gru=2, d_gcn=2, max_position=3)
    P = params_for(dims, vocab_size=3)
    sent = encode_ids(SentenceInstance(("w0",), (0, 1), (0, 1)), Vocab(["<pad>", "<unk>", "w0"]), 3)
    assert embed_tokens(sent, P).shape == (1, 4)


def test_embed_zero_distance_inside_subject():
    sent = encode_ids(SentenceInstance(("a", "b", "c", "d"), (1, 3), (3, 4)), vocab10(), 5)
    assert sent.subj_pos[1] == sent.subj_pos[2] == 5


def test_embed_all_zero_tables():
    dims = EncoderDims(word_dim=3, pos_dim=2, d_gru=2, d_gcn=2, max_position=5)
    P = {k: Tensor(np.zeros(v.shape)) for k, v in params_for(dims).items()}
    sent = encode_ids(SentenceInstance(("w1", "w2", "w3"), (0, 1), (2, 3)), vocab10(), 5)
    np.testing.assert_array_equal(embed_tokens(sent, P).data, np.zeros((3, 7)))


# ---------------------------------------------------------------- GRU

def test_gru_zero_params_stay_zero(rng):
    dims = EncoderDims(word_dim=3, pos_dim=1, d_gru=4, d_gcn=2)
    P = {k: Tensor(np.zeros(v.shape)) for k, v in params_for(dims).items()}
    out = bi_gru(Tensor(rng.normal(size=(5, 5))), P)
    np.testing.assert_array_equal(out.data, np.zeros((5, 4)))


def test_gru_single_token_halves_share_input(rng):
    dims = EncoderDims(word_dim=3, pos_dim=1, d_gru=4, d_gcn=2)
    P = params_for(dims)
    for g in "zrh":
        for part in "WUb":
            P[f"gru.bw.{part}_{g}"] = P[f"gru.fw.{part}_{g}"]
    out = bi_gru(Tensor(rng.normal(size=(1, 5))), P).data
    np.testing.assert_array_equal(out[0, :2], out[0, 2:])


def test_gru_matches_scalar_loop(rng):
    dims = EncoderDims(word_dim=3, pos_dim=1, d_gru=6, d_gcn=2)
    P = params_for(dims, seed=7)
    X = rng.normal(size=(3, 5))
    expected = ref.bi_gru(X, {k: v.data for k, v in P.items()})
    assert np.max(np.abs(bi_gru(Tensor(X), P).data - expected)) < 1e-10


def test_gru_rejects_odd_width():
    with pytest.raises(ConfigError):
        EncoderDims(d_gru=5).validate()


# ---------------------------------------------------------------- GCN

def _identity_self_params(d):
    P = {}
    for lab in LABELS:
        P[f"gcn.0.{lab}.W"] = Tensor(np.eye(d))
        P[f"gcn.0.{lab}.b"] = Tensor(np.zeros(d))
        P[f"gcn.0.{lab}.gate_w"] = Tensor(np.zeros(d))
        P[f"gcn.0.{lab}.gate_b"] = Tensor(np.zeros(1))
    return P


def test_gcn_single_node_half_gate():
    out = gcn_layer(Tensor([[2.0, 4.0]]), build_syntactic_graph([], 1), _identity_self_params(2), 0)
    np.testing.assert_array_equal(out.data, [[1.0, 2.0]])


def test_gcn_single_node_relu_clamp():
    out = gcn_layer(Tensor([[-2.0, -4.0]]), build_syntactic_graph([], 1), _identity_self_params(2), 0)
    np.testing.assert_array_equal(out.data, [[0.0, 0.0]])


def test_zero_gate_params_give_half_gates(rng):
    # with W = I, b = 0 and zero gates the layer is relu(0.5 * A_total @ H)
    H = rng.normal(size=(4, 3))
    g = build_syntactic_graph([(0, 1), (2, 1), (3, 2)], 4)
    A = sum(g.adjacency(lab) for lab in LABELS)
    out = gcn_layer(Tensor(H), g, _identity_self_params(3), 0)
    np.testing.assert_allclose(out.data, np.maximum(0.5 * A @ H, 0), atol=1e-14)


def test_gcn_chain_matches_brute_force(rng):
    dims = EncoderDims(word_dim=2, pos_dim=1, d_gru=4, d_gcn=3)
    P = params_for(dims, seed=11)
    H = rng.normal(size=(3, 4))
    g = build_syntactic_graph([(0, 1), (1, 2)], 3)
    expected = ref.gcn_layer(H, list(g.edges), {k: v.data for k, v in P.items()}, 0)
    assert np.max(np.abs(gcn_layer(Tensor(H), g, P, 0).data - expected)) < 1e-10


def test_gcn_random_graphs_match_brute_force(rng):
    dims = EncoderDims(word_dim=2, pos_dim=1, d_gru=4, d_gcn=3)
    for trial in range(100):
        P = params_for(dims, seed=trial)
        m = int(rng.integers(1, 9))
        sent = random_sentence(rng, m)
        g = build_syntactic_graph(sent.dep_edges, m)
        H = rng.normal(size=(m, 4))
        expected = ref.gcn_layer(H, ref.triples_for(sent.dep_edges, m), {k: v.data for k, v in P.items()}, 0)
        assert np.max(np.abs(gcn_layer(Tensor(H), g, P, 0).data - expected)) < 1e-10


# ---------------------------------------------------------------- encode_sentence

def test_zero_query_gives_uniform_attention(rng):
    dims = EncoderDims(word_dim=3, pos_dim=1, d_gru=4, d_gcn=2, max_position=5)
    P = params_for(dims)
    P["token_query"] = Tensor(np.zeros(6))
    sent = encode_ids(random_sentence(rng, 5), vocab10(), 5)
    _, alpha = encode_sentence(sent, P, 1)
    np.testing.assert_allclose(alpha.data, np.full(5, 0.2), atol=1e-15)


def test_single_token_sentence(rng):
    dims = EncoderDims(word_dim=3, pos_dim=1, d_gru=4, d_gcn=2, max_position=5)
    P = params_for(dims)
    sent = encode_ids(SentenceInstance(("w1",), (0, 1), (0, 1)), vocab10(), 5)
    s, alpha = encode_sentence(sent, P, 1)
    assert alpha.data.tolist() == [1.0]
    h_gru = bi_gru(embed_tokens(sent, P), P)
    h_cat = np.concatenate([h_gru.data, gcn_layer(h_gru, sent.adjacency, P, 0).data], axis=1)
    np.testing.assert_array_equal(s.data, h_cat[0])


@pytest.mark.parametrize("n_layers", [1, 2])
def test_encode_matches_weighted_sum_oracle(rng, n_layers):
    dims = EncoderDims(word_dim=3, pos_dim=2, d_gru=4, d_gcn=3, n_gcn_layers=n_layers, max_position=5)
    P = params_for(dims, seed=5)
    raw = random_sentence(rng, 6)
    sent = encode_ids(raw, vocab10(), 5)
    s, alpha = encode_sentence(sent, P, n_layers)
    exp_s, exp_alpha = ref.encode_sentence(sent.word_ids, sent.subj_pos, sent.obj_pos, raw.dep_edges,
                                           {k: v.data for k, v in P.items()}, n_layers)
    assert np.max(np.abs(alpha.data - exp_alpha)) < 1e-12
    assert np.max(np.abs(s.data - exp_s)) < 1e-12


def test_no_gcn_block_is_zero(rng):
    dims = EncoderDims(word_dim=3, pos_dim=1, d_gru=4, d_gcn=3, max_position=5)
    P = params_for(dims)
    sent = encode_ids(random_sentence(rng, 4), vocab10(), 5)
    s, _ = encode_sentence(sent, P, 1, use_gcn=False)
    assert s.shape == (7,)
    np.testing.assert_array_equal(s.data[4:], np.zeros(3))


def test_attention_normalized(rng):
    dims = EncoderDims(word_dim=3, pos_dim=1, d_gru=4, d_gcn=3, max_position=5)
    for seed in range(50):
        P = params_for(dims, seed=seed)
        sent = encode_ids(random_sentence(rng, int(rng.integers(1, 9))), vocab10(), 5)
        _, alpha = encode_sentence(sent, P, 1)
        assert np.all(alpha.data >= 0) and abs(alpha.data.sum() - 1) < 1e-9


def test_edge_permutation_bit_identical(rng):
    dims = EncoderDims(word_dim=3, pos_dim=1, d_gru=4, d_gcn=3, max_position=5)
    P = params_for(dims, seed=2)
    raw = random_sentence(rng, 7)
    sent = encode_ids(raw, vocab10(), 5)
    base, _ = encode_sentence(sent, P, 1)
    for _ in range(10):
        perm = list(sent.graph.edges)
        rng.shuffle(perm)
        g = LabeledGraph(sent.graph.n_nodes, tuple(perm))
        sent.graph, sent.adjacency = g, adjacency_tensors(g)
        again, _ = encode_sentence(sent, P, 1)
        assert again.data.tobytes() == base.data.tobytes()


@pytest.mark.parametrize("n_layers", [1, 2])
def test_encoder_grad_check(rng, n_layers):
    dims = EncoderDims(word_dim=3, pos_dim=2, d_gru=4, d_gcn=3, n_gcn_layers=n_layers, max_position=5)
    P = params_for(dims, seed=9)
    sent = encode_ids(random_sentence(rng, 6), vocab10(), 5)
    probe = Tensor(rng.normal(size=dims.sentence_width))
    err = dm.grad_check(lambda: dm.matmul(encode_sentence(sent, P, n_layers)[0], probe), list(P.values()))
    assert err < 1e-4
