"""Seeded synthetic distant-supervision data.

Each relation owns a trigger word, optional alternate triggers, a
two-word name and a fixed (subject type, object type) signature.  Clean
sentences put the relation's trigger between the two entity mentions;
noisy ones carry another relation's trigger.  The relation "world"
(names, triggers, signatures, word vectors) depends only on ``seed`` so
that several splits can be drawn from it with different ``bag_seed``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
import json

import numpy as np

from .corpus import (
    NA_RELATION,
    PAD,
    UNK,
    Bag,
    Embeddings,
    LabelSpace,
    SentenceInstance,
    Vocab,
    save_embeddings,
    save_jsonl,
)
from .diffmath import Tensor

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]


@dataclass(frozen=True)
class SynthSpec:
    n_relations: int = 3
    n_type_classes: int = 4
    n_bags: int = 30
    sentences_per_bag: tuple[int, int] = (1, 3)
    vocab_size: int = 40
    noise_rate: float = 0.0
    seed: int = 0
    # extensions beyond the core knobs
    bag_seed: int | None = None
    n_alt_triggers: int = 0
    alt_trigger_rate: float = 0.0
    na_rate: float = 0.0
    embed_dim: int = 16
    # indices into each relation's alternates that this split may draw from; None means all
    alt_trigger_pool: tuple[int, ...] | None = None

    def validate(self) -> None:
        counts = {
            "n_relations": self.n_relations,
            "n_type_classes": self.n_type_classes,
            "n_bags": self.n_bags,
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
        }
        for name, value in counts.items():
            if value < 1:
                raise ValueError(f"{name} must be positive, got {value}")
        lo, hi = self.sentences_per_bag
        if not 1 <= lo <= hi:
            raise ValueError(f"sentences_per_bag must satisfy 1 <= lo <= hi, got {self.sentences_per_bag}")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError(f"noise_rate must lie in [0, 1), got {self.noise_rate}")
        for name in ("alt_trigger_rate", "na_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.n_alt_triggers < 0:
            raise ValueError("n_alt_triggers must be >= 0")
        if self.alt_trigger_pool is not None and any(
            not 0 <= i < self.n_alt_triggers for i in self.alt_trigger_pool
        ):
            raise ValueError(f"alt_trigger_pool indices must lie in [0, {self.n_alt_triggers})")
        if self.n_type_classes > 38:
            raise ValueError("at most 38 coarse type classes")


@dataclass
class SynthOutput:
    dataset: list[Bag]
    aliases: dict[str, list[str]]
    paraphrases: dict[str, list[str]]
    type_assignments: dict[str, list[str]]
    labels: LabelSpace
    triggers: dict[str, str]
    alt_triggers: dict[str, list[str]]
    signatures: dict[str, tuple[str, str]]
    words: list[str]
    vectors: np.ndarray
    # per bag, per sentence: True when the sentence carries a wrong trigger
    noisy: list[list[bool]] = field(default_factory=list)

    def embeddings(self) -> Embeddings:
        """Same table ``load_embeddings`` would build from the written file."""
        table = np.zeros((len(self.words) + 2, self.vectors.shape[1]))
        table[2:] = self.vectors
        table[1] = self.vectors.mean(axis=0)
        return Embeddings(Vocab([PAD, UNK, *self.words]), Tensor(table))

    def write(self, out_dir: str | Path, prefix: str = "") -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "data": out / f"{prefix}data.jsonl",
            "aliases": out / f"{prefix}aliases.json",
            "paraphrases": out / f"{prefix}paraphrases.json",
            "embeddings": out / f"{prefix}embeddings.txt",
        }
        save_jsonl(self.dataset, paths["data"])
        paths["aliases"].write_text(json.dumps(self.aliases, indent=1, sort_keys=True) + "\n")
        paths["paraphrases"].write_text(json.dumps(self.paraphrases, indent=1, sort_keys=True) + "\n")
        save_embeddings(self.words, self.vectors, paths["embeddings"])
        return paths


def _pseudo_words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        n_syl = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n_syl))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def name_phrase(relation: str) -> str:
    return relation.replace("_", " ")


def synth_generate(spec: SynthSpec) -> SynthOutput:
    """Build a dataset plus alias, paraphrase and embedding resources; a pure function of ``spec``."""
    spec.validate()
    world = np.random.default_rng([spec.seed, 0])
    taken: set[str] = set()

    n_rel = spec.n_relations
    name_words = _pseudo_words(world, 2 * n_rel, taken)
    relations = [f"{name_words[2 * i]}_{name_words[2 * i + 1]}" for i in range(n_rel)]
    trigger_words = _pseudo_words(world, n_rel * (1 + spec.n_alt_triggers), taken)
    triggers = {r: trigger_words[i] for i, r in enumerate(relations)}
    alts = {
        r: trigger_words[n_rel + i * spec.n_alt_triggers: n_rel + (i + 1) * spec.n_alt_triggers]
        for i, r in enumerate(relations)
    }
    fillers = _pseudo_words(world, spec.vocab_size, taken)
    types = [f"type{i}" for i in range(spec.n_type_classes)]

    n_t = spec.n_type_classes
    if n_t * n_t >= n_rel:
        picks = world.choice(n_t * n_t, size=n_rel, replace=False)
    else:
        picks = world.integers(0, n_t * n_t, size=n_rel)
    signatures = {r: (types[int(p) // n_t], types[int(p) % n_t]) for r, p in zip(relations, picks)}

    aliases = {r: [triggers[r], *alts[r]] for r in relations}
    paraphrases = {name_phrase(r): [triggers[r], *alts[r][: spec.n_alt_triggers // 2]] for r in relations}

    pool = range(spec.n_alt_triggers) if spec.alt_trigger_pool is None else spec.alt_trigger_pool
    usable = {r: [alts[r][i] for i in pool] for r in relations}

    bag_seed = spec.seed if spec.bag_seed is None else spec.bag_seed
    rng = np.random.default_rng([spec.seed, 1, bag_seed])
    entity_names = [f"ent{bag_seed}x{i}" for i in range(2 * spec.n_bags)]

    dataset: list[Bag] = []
    noisy: list[list[bool]] = []
    type_assignments: dict[str, list[str]] = {}
    lo, hi = spec.sentences_per_bag
    for b in range(spec.n_bags):
        is_na = spec.na_rate > 0 and rng.random() < spec.na_rate
        subj, obj = entity_names[2 * b], entity_names[2 * b + 1]
        if is_na:
            relation = NA_RELATION
            st, ot = types[int(rng.integers(n_t))], types[int(rng.integers(n_t))]
        else:
            relation = relations[int(rng.integers(n_rel))]
            st, ot = signatures[relation]
        type_assignments[subj] = [st]
        type_assignments[obj] = [ot]
        sentences, flags = [], []
        for _ in range(int(rng.integers(lo, hi + 1))):
            wrong = False
            if is_na:
                trigger = None
            elif rng.random() < spec.noise_rate and n_rel > 1:
                others = [r for r in relations if r != relation]
                trigger = triggers[others[int(rng.integers(len(others)))]]
                wrong = True
            elif usable[relation] and rng.random() < spec.alt_trigger_rate:
                trigger = usable[relation][int(rng.integers(len(usable[relation])))]
            else:
                trigger = triggers[relation]
            sentences.append(_sentence(rng, subj, obj, trigger, fillers))
            flags.append(wrong)
        dataset.append(
            Bag(subj=subj, obj=obj, relation=relation, sentences=tuple(sentences), subj_types=(st,), obj_types=(ot,))
        )
        noisy.append(flags)

    relation_inventory = ((NA_RELATION,) if spec.na_rate > 0 else ()) + tuple(relations)
    words = sorted(set(name_words) | set(trigger_words) | set(fillers) | set(entity_names))
    vec_rng = np.random.default_rng([spec.seed, 2])
    base = {w: vec_rng.standard_normal(spec.embed_dim) for w in sorted(taken)}
    # entity names depend on bag_seed, so their vectors come from a name-keyed stream
    vectors = np.stack([
        base[w] if w in base else np.random.default_rng([spec.seed, 3, *map(ord, w)]).standard_normal(spec.embed_dim)
        for w in words
    ])
    return SynthOutput(
        dataset=dataset,
        aliases=aliases,
        paraphrases=paraphrases,
        type_assignments=type_assignments,
        labels=LabelSpace(relation_inventory, tuple(types)),
        triggers=triggers,
        alt_triggers=alts,
        signatures=signatures,
        words=words,
        vectors=vectors,
        noisy=noisy,
    )


def _sentence(rng: np.random.Generator, subj: str, obj: str, trigger: str | None, fillers: list[str]) -> SentenceInstance:
    def pick(k: int) -> list[str]:
        return [fillers[int(i)] for i in rng.integers(0, len(fillers), size=k)]

    prefix = pick(int(rng.integers(0, 3)))
    middle = pick(int(rng.integers(0, 2)))
    if trigger is not None:
        middle += [trigger] + pick(int(rng.integers(0, 2)))
    elif not middle:
        middle = pick(1)
    suffix = pick(int(rng.integers(0, 3)))
    tokens = prefix + [subj] + middle + [obj] + suffix
    s = len(prefix)
    o = s + 1 + len(middle)
    edges = [(i, i + 1) for i in range(len(tokens) - 1)]
    if trigger is not None:
        t = s + 1 + middle.index(trigger)
        for head in (s, o):
            if (t, head) not in edges:
                edges.append((t, head))
    return SentenceInstance(tuple(tokens), (s, s + 1), (o, o + 1), tuple(edges))


def split_spec(spec: SynthSpec, bag_seed: int, **overrides) -> SynthSpec:
    """Same relation world, different bag draw."""
    return replace(spec, bag_seed=bag_seed, **overrides)
