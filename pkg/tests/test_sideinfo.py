import math

import numpy as np
import pytest

from reside.corpus import PAD, UNK, Embeddings, SentenceInstance, Vocab
from reside.diffmath import Tensor
from reside import diffmath as dm
from reside.errors import ConfigError
from reside.sideinfo import (
    build_alias_index,
    entity_type_embedding,
    extract_phrases,
    match_relations,
    match_vectors,
    matched_relation_embedding,
    relation_name_tokens,
)


def embeddings(words, vectors):
    table = np.zeros((len(words) + 2, len(vectors[0])))
    table[2:] = vectors
    return Embeddings(Vocab([PAD, UNK, *words]), Tensor(table))


def brute_force_match(phrase_vecs, alias_vecs, alias_rel, theta):
    def unit(v):
        n = math.sqrt(sum(x * x for x in v))
        return [x / n for x in v] if n > 0 else [0.0] * len(v)

    matched = set()
    for p in phrase_vecs:
        pu = unit(p)
        best, best_j = None, None
        for j, a in enumerate(alias_vecs):
            d = 1.0 - sum(x * y for x, y in zip(pu, unit(a)))
            if best is None or d < best:
                best, best_j = d, j
        if best is not None and best <= theta:
            matched.add(alias_rel[best_j])
    return matched


# ---------------------------------------------------------------- extraction

def test_extract_between_phrase():
    sent = SentenceInstance(("matt", "executive", "of", "lowermybills"), (0, 1), (3, 4))
    assert ("executive", "of") in extract_phrases(sent)


def test_adjacent_spans_without_edges_give_nothing():
    assert extract_phrases(SentenceInstance(("a", "b"), (0, 1), (1, 2))) == []


def test_provided_phrases_pass_through():
    sent = SentenceInstance(("a", "b"), (0, 1), (1, 2), phrases=(("founded",),))
    assert ("founded",) in extract_phrases(sent)


def test_one_hop_neighbours_of_span_heads():
    # heads are the last tokens of each span: index 1 and index 4
    tokens = ("x", "jobs", "quietly", "started", "apple", "inc", "today")
    sent = SentenceInstance(tokens, (0, 2), (4, 6), dep_edges=((3, 1), (5, 6), (1, 0), (2, 3)))
    phrases = extract_phrases(sent, max_between=1)
    assert ("started",) in phrases
    assert ("today",) in phrases
    assert ("x",) not in phrases  # inside the subject span
    assert ("quietly", "started") not in phrases  # longer than max_between


def test_extraction_deterministic(synth_small):
    for bag in synth_small.dataset:
        for s in bag.sentences:
            assert extract_phrases(s) == extract_phrases(s)


# ---------------------------------------------------------------- alias index

@pytest.fixture
def founder_emb(rng):
    words = ["founder", "of", "company", "founded", "co-founded", "born", "in"]
    return embeddings(words, rng.normal(size=(len(words), 6)))


def test_mode_none_is_empty(founder_emb):
    assert len(build_alias_index(["founderOfCompany"], None, None, "none", founder_emb)) == 0


def test_mode_one_splits_name(founder_emb):
    index = build_alias_index(["founderOfCompany"], None, None, "one", founder_emb)
    assert index.phrases == [("founder", "of", "company")]


def test_mode_one_ppdb_expands(founder_emb):
    para = {"founder of company": ["founded", "co-founded"]}
    index = build_alias_index(["founderOfCompany"], None, para, "one+ppdb", founder_emb)
    assert len(index) == 3 and set(index.relation_ids) == {0}


def test_mode_all_uses_alias_file(founder_emb):
    aliases = {"founderOfCompany": ["founded", "co-founded"], "bornIn": ["born in"]}
    index = build_alias_index(["NA", "founderOfCompany", "bornIn"], aliases, None, "all", founder_emb)
    assert sorted(zip(index.relation_ids, index.phrases)) == [
        (1, ("co-founded",)), (1, ("founded",)), (1, ("founder", "of", "company")),
        (2, ("born", "in")),
    ]
    norms = np.linalg.norm(index.vectors, axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)


def test_missing_resources_are_config_errors(founder_emb):
    with pytest.raises(ConfigError):
        build_alias_index(["r"], None, None, "all", founder_emb)
    with pytest.raises(ConfigError):
        build_alias_index(["r"], None, None, "one+ppdb", founder_emb)
    with pytest.raises(ConfigError):
        build_alias_index(["r"], None, None, "one", None)


def test_name_tokens():
    assert relation_name_tokens("founderOfCompany") == ["founder", "of", "company"]
    assert relation_name_tokens("/people/person/place_of_birth") == ["place", "of", "birth"]


def test_oov_alias_is_zero_vector(founder_emb):
    index = build_alias_index(["r"], {"r": ["qwxz"]}, None, "all", founder_emb)
    assert np.all(index.vectors[index.phrases.index(("qwxz",))] == 0)


# ---------------------------------------------------------------- matching

def test_self_match(founder_emb):
    index = build_alias_index(["founderOfCompany"], {"founderOfCompany": ["founded"]}, None, "all", founder_emb)
    assert match_relations([("founded",)], index, 0.25, founder_emb) == {0}


def test_orthogonal_no_match():
    assert match_vectors(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), [0], 0.5) == set()


def test_empty_inputs(founder_emb):
    index = build_alias_index(["founderOfCompany"], None, None, "one", founder_emb)
    assert match_relations([], index, 0.5, founder_emb) == set()
    empty = build_alias_index(["founderOfCompany"], None, None, "none", founder_emb)
    assert match_relations([("founded",)], empty, 2.0, founder_emb) == set()


def test_match_equals_brute_force(rng):
    for _ in range(200):
        aliases = rng.normal(size=(5, 4))
        rel = rng.integers(0, 3, size=5).tolist()
        phrases = rng.normal(size=(int(rng.integers(1, 4)), 4))
        theta = float(rng.uniform(0, 1.5))
        assert match_vectors(phrases, aliases, rel, theta) == brute_force_match(
            phrases.tolist(), aliases.tolist(), rel, theta
        )


def test_match_scale_invariant(rng):
    for _ in range(100):
        aliases = rng.normal(size=(5, 4))
        phrases = rng.normal(size=(3, 4))
        rel = rng.integers(0, 3, size=5).tolist()
        base = match_vectors(phrases, aliases, rel, 0.6)
        c_p = rng.uniform(0.1, 10, size=(3, 1))
        c_a = rng.uniform(0.1, 10, size=(5, 1))
        assert match_vectors(phrases * c_p, aliases * c_a, rel, 0.6) == base


# ---------------------------------------------------------------- learnable embeddings

@pytest.fixture
def side_params(rng):
    return {"rel_emb": Tensor(rng.normal(size=(5, 3)), requires_grad=True),
            "type_emb": Tensor(rng.normal(size=(4, 2)), requires_grad=True)}


def test_singleton_match_is_row(side_params):
    np.testing.assert_array_equal(matched_relation_embedding({1}, side_params).data, side_params["rel_emb"].data[1])


def test_empty_match_is_no_match_row(side_params):
    np.testing.assert_array_equal(matched_relation_embedding(set(), side_params).data, side_params["rel_emb"].data[4])


def test_mean_of_matches(side_params):
    rows = side_params["rel_emb"].data
    for ids in ({0, 2}, {0, 1, 3}, {0, 1, 2, 3}):
        expected = [sum(rows[i][j] for i in ids) / len(ids) for j in range(3)]
        assert np.max(np.abs(matched_relation_embedding(ids, side_params).data - expected)) < 1e-12


def test_match_gradient_weight(side_params):
    dm.backward(dm.sum_all(matched_relation_embedding({0, 2}, side_params)))
    np.testing.assert_allclose(side_params["rel_emb"].grad[[0, 2]], 0.5)
    np.testing.assert_array_equal(side_params["rel_emb"].grad[[1, 3, 4]], 0.0)


def test_type_embedding(side_params):
    T = side_params["type_emb"].data
    # e.g. an entity typed both government and location
    assert np.max(np.abs(entity_type_embedding([0, 2], side_params).data - (T[0] + T[2]) / 2)) < 1e-12
    np.testing.assert_array_equal(entity_type_embedding([], side_params).data, T[3])
    np.testing.assert_array_equal(entity_type_embedding([1], side_params).data, T[1])
