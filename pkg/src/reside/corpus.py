"""Bag-structured datasets, embeddings and vocabularies.

A dataset is a list of :class:`Bag` objects, one per entity pair.  On disk
it is JSONL, one bag per line::

    {"subj": "...", "obj": "...", "relation": "...",
     "subj_types": [...], "obj_types": [...],
     "sentences": [{"tokens": [...], "subj_span": [s, e], "obj_span": [s, e],
                    "dep_edges": [[head, dep], ...], "phrases": [[...], ...]}]}

Spans are half-open token ranges.  ``phrases`` is optional.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .diffmath import Tensor
from .errors import ParseError, ValidationError

PAD = "<pad>"
UNK = "<unk>"
NA_RELATION = "NA"
MAX_COARSE_TYPES = 38


@dataclass(frozen=True)
class SentenceInstance:
    tokens: tuple[str, ...]
    subj_span: tuple[int, int]
    obj_span: tuple[int, int]
    dep_edges: tuple[tuple[int, int], ...] = ()
    phrases: tuple[tuple[str, ...], ...] | None = None

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Bag:
    subj: str
    obj: str
    relation: str
    sentences: tuple[SentenceInstance, ...]
    subj_types: tuple[str, ...] = ()
    obj_types: tuple[str, ...] = ()

    @property
    def pair(self) -> tuple[str, str]:
        return (self.subj, self.obj)


@dataclass
class Vocab:
    """Word/id map with reserved PAD (id 0) and UNK (id 1) entries."""

    words: list[str] = field(default_factory=lambda: [PAD, UNK])

    def __post_init__(self):
        if self.words[:2] != [PAD, UNK]:
            self.words = [PAD, UNK] + [w for w in self.words if w not in (PAD, UNK)]
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("vocabulary contains duplicate words")

    pad_id = 0
    unk_id = 1

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def id(self, word: str) -> int:
        return self.index.get(word, self.unk_id)

    def ids(self, words: Iterable[str]) -> list[int]:
        return [self.id(w) for w in words]


@dataclass
class Embeddings:
    vocab: Vocab
    table: Tensor

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def vector(self, word: str) -> np.ndarray | None:
        """Pretrained row for ``word`` (falling back to lowercase), None when unknown."""
        for w in (word, word.lower()):
            i = self.vocab.index.get(w)
            if i is not None and i > Vocab.unk_id:
                return self.table.data[i]
        return None


@dataclass(frozen=True)
class LabelSpace:
    """Relation and coarse-type inventories shared by training and evaluation."""

    relations: tuple[str, ...]
    types: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.types) > MAX_COARSE_TYPES:
            raise ValueError(f"at most {MAX_COARSE_TYPES} coarse types are supported, got {len(self.types)}")

    @classmethod
    def from_dataset(cls, dataset: Sequence[Bag]) -> LabelSpace:
        relations = sorted({b.relation for b in dataset})
        if NA_RELATION in relations:
            relations.remove(NA_RELATION)
            relations.insert(0, NA_RELATION)
        types = sorted({t for b in dataset for t in (*b.subj_types, *b.obj_types)})
        return cls(tuple(relations), tuple(types))

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def na_id(self) -> int | None:
        return self.relations.index(NA_RELATION) if NA_RELATION in self.relations else None

    def relation_id(self, name: str) -> int:
        try:
            return self.relations.index(name)
        except ValueError:
            raise ValidationError(f"unknown relation {name!r}") from None

    def type_ids(self, names: Iterable[str]) -> list[int]:
        ids = []
        for name in names:
            try:
                ids.append(self.types.index(name))
            except ValueError:
                raise ValidationError(f"unknown entity type {name!r}") from None
        return ids


# ---------------------------------------------------------------- validation

def validate_bag(bag: Bag, labels: LabelSpace | None = None) -> list[str]:
    """Return every invariant violation in ``bag``; an empty list means the bag is valid."""
    problems: list[str] = []
    if not bag.sentences:
        problems.append("bag has no sentences")
    if labels is not None:
        if bag.relation not in labels.relations:
            problems.append(f"relation {bag.relation!r} not in relation vocabulary")
        for t in (*bag.subj_types, *bag.obj_types):
            if t not in labels.types:
                problems.append(f"type {t!r} not in type vocabulary")
    for k, sent in enumerate(bag.sentences):
        m = len(sent.tokens)
        where = f"sentence {k}"
        if m == 0:
            problems.append(f"{where}: no tokens")
        spans_ok = True
        for label, (start, end) in (("subj_span", sent.subj_span), ("obj_span", sent.obj_span)):
            if not 0 <= start < end <= m:
                problems.append(f"{where}: {label} [{start}, {end}) out of bounds for {m} tokens")
                spans_ok = False
        if spans_ok:
            (a, b), (c, d) = sent.subj_span, sent.obj_span
            if a < d and c < b:
                problems.append(f"{where}: span overlap between subj [{a}, {b}) and obj [{c}, {d})")
        for head, dep in sent.dep_edges:
            if not (0 <= head < m and 0 <= dep < m):
                problems.append(f"{where}: dep edge ({head}, {dep}) has an endpoint outside [0, {m})")
            elif head == dep:
                problems.append(f"{where}: dep edge ({head}, {dep}) is a self-edge")
    return problems


# ---------------------------------------------------------------- JSONL

def _sentence_from_json(obj: dict) -> SentenceInstance:
    phrases = obj.get("phrases")
    return SentenceInstance(
        tokens=tuple(str(t) for t in obj["tokens"]),
        subj_span=_span(obj["subj_span"]),
        obj_span=_span(obj["obj_span"]),
        dep_edges=tuple((int(h), int(d)) for h, d in obj.get("dep_edges", [])),
        phrases=None if phrases is None else tuple(tuple(str(t) for t in p) for p in phrases),
    )


def _span(value) -> tuple[int, int]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise TypeError(f"span must be a pair of integers, got {value!r}")
    return (int(value[0]), int(value[1]))


def bag_from_json(obj: dict) -> Bag:
    return Bag(
        subj=str(obj["subj"]),
        obj=str(obj["obj"]),
        relation=str(obj["relation"]),
        sentences=tuple(_sentence_from_json(s) for s in obj["sentences"]),
        subj_types=tuple(str(t) for t in obj.get("subj_types", [])),
        obj_types=tuple(str(t) for t in obj.get("obj_types", [])),
    )


def bag_to_json(bag: Bag) -> dict:
    sentences = []
    for s in bag.sentences:
        item = {
            "tokens": list(s.tokens),
            "subj_span": list(s.subj_span),
            "obj_span": list(s.obj_span),
            "dep_edges": [list(e) for e in s.dep_edges],
        }
        if s.phrases is not None:
            item["phrases"] = [list(p) for p in s.phrases]
        sentences.append(item)
    return {
        "subj": bag.subj,
        "obj": bag.obj,
        "relation": bag.relation,
        "subj_types": list(bag.subj_types),
        "obj_types": list(bag.obj_types),
        "sentences": sentences,
    }


def dumps_jsonl(dataset: Iterable[Bag]) -> str:
    return "".join(json.dumps(bag_to_json(b), sort_keys=True) + "\n" for b in dataset)


def save_jsonl(dataset: Iterable[Bag], path: str | Path) -> None:
    Path(path).write_text(dumps_jsonl(dataset), encoding="utf-8")


def load_jsonl(path: str | Path) -> list[Bag]:
    """Read a JSONL dataset, validating every bag; errors carry the 1-based line number."""
    dataset = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", lineno)
            try:
                bag = bag_from_json(obj)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"schema violation: {exc!r}", lineno) from None
            problems = validate_bag(bag)
            if problems:
                raise ValidationError("; ".join(problems), lineno)
            dataset.append(bag)
    return dataset


# ---------------------------------------------------------------- vocab / embeddings

def build_vocab(dataset: Iterable[Bag], min_count: int = 1) -> Vocab:
    """Words seen at least ``min_count`` times, ordered by frequency then lexicographically."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = Counter(tok for bag in dataset for s in bag.sentences for tok in s.tokens)
    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    return Vocab([PAD, UNK, *kept])


def load_embeddings(path: str | Path, dim: int) -> Embeddings:
    """Load ``word v1 ... vdim`` lines.  UNK gets the mean of all rows and PAD stays zero."""
    words: list[str] = []
    rows: list[list[float]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ParseError(f"expected a word and {dim} floats, got {len(parts) - 1} values", lineno)
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError:
                raise ParseError("non-numeric vector entry", lineno) from None
            words.append(parts[0])
    vocab = Vocab([PAD, UNK, *words])
    if len(vocab) != len(words) + 2:
        raise ParseError("duplicate or reserved word in embedding file")
    table = np.zeros((len(vocab), dim))
    if rows:
        loaded = np.array(rows)
        table[2:] = loaded
        table[Vocab.unk_id] = loaded.mean(axis=0)
    return Embeddings(vocab, Tensor(table))


def save_embeddings(words: Sequence[str], vectors: np.ndarray, path: str | Path) -> None:
    lines = [w + " " + " ".join(repr(float(x)) for x in row) for w, row in zip(words, vectors)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------- per-sentence features

def position_ids(length: int, span: tuple[int, int], max_position: int = 60) -> list[int]:
    """Signed distance to the nearest span token, clipped to +-max_position and shifted to >= 0."""
    start, end = span
    ids = []
    for i in range(length):
        if i < start:
            d = i - start
        elif i >= end:
            d = i - (end - 1)
        else:
            d = 0
        ids.append(max(-max_position, min(max_position, d)) + max_position)
    return ids


def truncate_sentence(sent: SentenceInstance, max_len: int = 100) -> SentenceInstance:
    """Cut a long sentence to a window around both entity spans.

    If the spans themselves lie further apart than ``max_len`` the window
    covers exactly both spans and may exceed the cap.
    """
    m = len(sent.tokens)
    if m <= max_len:
        return sent
    lo = min(sent.subj_span[0], sent.obj_span[0])
    hi = max(sent.subj_span[1], sent.obj_span[1])
    spare = max_len - (hi - lo)
    if spare > 0:
        lo = max(0, lo - spare // 2)
        hi = min(m, lo + max_len)
        lo = max(0, hi - max_len)
    keep = range(lo, hi)
    edges = tuple((h - lo, d - lo) for h, d in sent.dep_edges if h in keep and d in keep)
    return SentenceInstance(
        tokens=sent.tokens[lo:hi],
        subj_span=(sent.subj_span[0] - lo, sent.subj_span[1] - lo),
        obj_span=(sent.obj_span[0] - lo, sent.obj_span[1] - lo),
        dep_edges=edges,
        phrases=sent.phrases,
    )
