"""Relation-alias and entity-type side information.

Phrase matching is a preprocessing step: each sentence's candidate
phrases are compared against the alias index once, and only the matched
relation ids are kept.  The relation and type embedding tables are the
learnable part.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import diffmath as dm
from .corpus import NA_RELATION, Embeddings, SentenceInstance
from .diffmath import Tensor
from .errors import ConfigError

ALIAS_MODES = ("none", "one", "one+ppdb", "all")
DEFAULT_THRESHOLD = 0.25
DEFAULT_MAX_BETWEEN = 10

_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")


def normalize_mode(mode: str) -> str:
    m = mode.strip().lower().replace("_", "+")
    m = {"oneppdb": "one+ppdb", "one-ppdb": "one+ppdb"}.get(m, m)
    if m not in ALIAS_MODES:
        raise ConfigError(f"alias mode must be one of {ALIAS_MODES}, got {mode!r}")
    return m


def relation_name_tokens(relation: str) -> list[str]:
    """``founderOfCompany`` -> founder of company; Freebase paths keep their last segment."""
    last = [seg for seg in relation.split("/") if seg]
    name = last[-1] if last else relation
    tokens = []
    for part in re.split(r"[_\s\-]+", name):
        tokens.extend(t.lower() for t in _CAMEL.split(part) if t)
    return tokens


def phrase_tokens(phrase: str) -> list[str]:
    return [t.lower() for t in phrase.split()]


def unit_phrase_vector(tokens: Sequence[str], embeddings: Embeddings) -> np.ndarray:
    """Mean of the known token vectors, L2-normalised; zeros if no token is known."""
    rows = [v for v in (embeddings.vector(t) for t in tokens) if v is not None]
    if not rows:
        return np.zeros(embeddings.dim)
    mean = np.mean(rows, axis=0)
    norm = np.linalg.norm(mean)
    return mean / norm if norm > 0 else np.zeros(embeddings.dim)


@dataclass
class AliasIndex:
    mode: str
    relation_ids: list[int] = field(default_factory=list)
    phrases: list[tuple[str, ...]] = field(default_factory=list)
    vectors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __len__(self) -> int:
        return len(self.relation_ids)

    def entries(self) -> list[tuple[int, tuple[str, ...], np.ndarray]]:
        return list(zip(self.relation_ids, self.phrases, self.vectors))


def build_alias_index(relations: Sequence[str], aliases: Mapping[str, Sequence[str]] | None,
                      paraphrases: Mapping[str, Sequence[str]] | None, mode: str,
                      embeddings: Embeddings | None) -> AliasIndex:
    """Collect alias phrases per relation according to ``mode`` and embed them.

    ``one`` uses relation names, ``one+ppdb`` adds the paraphrases listed
    for each name, ``all`` adds the alias file on top of the names.  NA
    never receives aliases.
    """
    mode = normalize_mode(mode)
    if mode == "none":
        return AliasIndex(mode)
    if embeddings is None:
        raise ConfigError(f"alias mode {mode!r} needs word embeddings")
    if mode == "one+ppdb" and paraphrases is None:
        raise ConfigError("alias mode 'one+ppdb' needs a paraphrase file")
    if mode == "all" and aliases is None:
        raise ConfigError("alias mode 'all' needs an alias file")

    rel_ids: list[int] = []
    phrases: list[tuple[str, ...]] = []
    for rid, rel in enumerate(relations):
        if rel == NA_RELATION:
            continue
        name = tuple(relation_name_tokens(rel))
        found = [name]
        if mode == "one+ppdb":
            found += [tuple(phrase_tokens(p)) for p in paraphrases.get(" ".join(name), [])]
        elif mode == "all":
            found += [tuple(phrase_tokens(p)) for p in aliases.get(rel, [])]
        seen = set()
        for phrase in found:
            if phrase and phrase not in seen:
                seen.add(phrase)
                rel_ids.append(rid)
                phrases.append(phrase)
    vectors = np.array([unit_phrase_vector(p, embeddings) for p in phrases]).reshape(len(phrases), embeddings.dim)
    return AliasIndex(mode, rel_ids, phrases, vectors)


def extract_phrases(sentence: SentenceInstance, max_between: int = DEFAULT_MAX_BETWEEN) -> list[tuple[str, ...]]:
    """Candidate relation phrases for one sentence.

    Provided phrases come first, then the tokens strictly between the two
    mentions (if there are 1..max_between of them), then every one-hop
    dependency neighbour of either mention's head (its last token) that
    lies outside both mentions.
    """
    out: list[tuple[str, ...]] = []
    if sentence.phrases:
        out.extend(tuple(p) for p in sentence.phrases if p)
    (s0, s1), (o0, o1) = sentence.subj_span, sentence.obj_span
    lo, hi = (s1, o0) if s1 <= o0 else (o1, s0)
    if 0 < hi - lo <= max_between:
        out.append(tuple(sentence.tokens[lo:hi]))
    inside = set(range(s0, s1)) | set(range(o0, o1))
    neighbours: set[int] = set()
    for head in (s1 - 1, o1 - 1):
        for a, b in sentence.dep_edges:
            if a == head and b not in inside:
                neighbours.add(b)
            elif b == head and a not in inside:
                neighbours.add(a)
    out.extend((sentence.tokens[i],) for i in sorted(neighbours))
    return list(dict.fromkeys(out))


def match_relations(phrases: Iterable[Sequence[str]], index: AliasIndex, threshold: float,
                    embeddings: Embeddings | None) -> set[int]:
    """Relations whose nearest alias lies within ``threshold`` cosine distance of some phrase."""
    phrases = list(phrases)
    if not phrases or len(index) == 0:
        return set()
    P = np.array([unit_phrase_vector(p, embeddings) for p in phrases])
    return match_vectors(P, index.vectors, index.relation_ids, threshold)


def match_vectors(phrase_vectors: np.ndarray, alias_vectors: np.ndarray, alias_relations: Sequence[int],
                  threshold: float) -> set[int]:
    """Vector-level matcher; rows need not be normalised (zero rows never match)."""
    if len(phrase_vectors) == 0 or len(alias_vectors) == 0:
        return set()
    P = _unit_rows(phrase_vectors)
    A = _unit_rows(alias_vectors)
    dist = 1.0 - P @ A.T
    best = dist.argmin(axis=1)
    return {int(alias_relations[j]) for i, j in enumerate(best) if dist[i, j] <= threshold}


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


# ---------------------------------------------------------------- learnable side embeddings

def init_side_params(n_relations: int, n_types: int, rel_dim: int, type_dim: int,
                     rng: np.random.Generator) -> dict[str, Tensor]:
    """``rel_emb`` has a trailing no-match row, ``type_emb`` a trailing unknown-type row."""
    b_rel, b_type = 1.0 / np.sqrt(rel_dim), 1.0 / np.sqrt(type_dim)
    return {
        "rel_emb": Tensor(rng.uniform(-b_rel, b_rel, size=(n_relations + 1, rel_dim)), requires_grad=True),
        "type_emb": Tensor(rng.uniform(-b_type, b_type, size=(n_types + 1, type_dim)), requires_grad=True),
    }


def _mean_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    rows = dm.gather_rows(table, list(ids))
    weights = Tensor(np.full(len(ids), 1.0 / len(ids)))
    return dm.matmul(weights, rows)


def matched_relation_embedding(matched: Iterable[int], params: Mapping[str, Tensor]) -> Tensor:
    table = params["rel_emb"]
    ids = sorted(set(matched))
    return _mean_rows(table, ids or [table.shape[0] - 1])


def entity_type_embedding(type_ids: Sequence[int], params: Mapping[str, Tensor]) -> Tensor:
    table = params["type_emb"]
    return _mean_rows(table, list(type_ids) or [table.shape[0] - 1])
