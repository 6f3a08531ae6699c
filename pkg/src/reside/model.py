"""Bag-level model: sentence encoding plus side information, sentence attention, softmax classifier.

Besides the encoder tensors (see :mod:`reside.encoder`) the parameter
dict holds ``rel_emb``, ``type_emb``, ``bag_query`` (sentence attention
query), ``cls_W`` (n_relations, width) and ``cls_b``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import diffmath as dm
from .corpus import Bag, Embeddings, LabelSpace, Vocab, build_vocab, truncate_sentence
from .diffmath import Tensor
from .encoder import EncodedSentence, EncoderDims, encode_ids, encode_sentence, init_encoder_params
from .errors import ArtifactMismatchError, ConfigError, ContractError, NumericError
from .sideinfo import (
    AliasIndex,
    build_alias_index,
    entity_type_embedding,
    extract_phrases,
    init_side_params,
    match_relations,
    matched_relation_embedding,
    normalize_mode,
)

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
CHECKPOINT_FORMAT = "reside-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Flags:
    use_gcn: bool = True
    use_rel_side: bool = True
    use_type_side: bool = True


@dataclass
class TrainConfig:
    # Defaults are desk-scale choices, not published hyperparameters.
    learning_rate: float = 1e-3
    n_epochs: int = 20
    batch_bags: int = 8
    seed: int = 0
    l2_coeff: float = 1e-5
    dropout_keep: float = 0.9
    alias_mode: str = "all"
    cosine_threshold: float = 0.25
    n_gcn_layers: int = 1
    use_gcn: bool = True
    use_rel_side: bool = True
    use_type_side: bool = True
    word_dim: int = 50
    pos_dim: int = 5
    d_gru: int = 64
    d_gcn: int = 32
    rel_dim: int = 16
    type_dim: int = 16
    max_position: int = 60
    max_len: int = 100
    max_between: int = 10
    min_count: int = 1

    def validate(self) -> None:
        self.alias_mode = normalize_mode(self.alias_mode)
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError(f"dropout_keep must lie in (0, 1], got {self.dropout_keep}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.l2_coeff < 0:
            raise ConfigError("l2_coeff must be >= 0")
        if self.n_epochs < 0 or self.batch_bags < 1:
            raise ConfigError("n_epochs must be >= 0 and batch_bags >= 1")
        if not 0.0 <= self.cosine_threshold <= 2.0:
            raise ConfigError(f"cosine_threshold must lie in [0, 2], got {self.cosine_threshold}")
        if min(self.rel_dim, self.type_dim, self.max_len, self.min_count) < 1:
            raise ConfigError("rel_dim, type_dim, max_len and min_count must be positive")
        self.encoder_dims().validate()

    def encoder_dims(self) -> EncoderDims:
        return EncoderDims(self.word_dim, self.pos_dim, self.d_gru, self.d_gcn, self.n_gcn_layers, self.max_position)

    def flags(self) -> Flags:
        return Flags(self.use_gcn, self.use_rel_side, self.use_type_side)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(data))


@dataclass
class SideResources:
    """External inputs for relation-alias matching."""

    embeddings: Embeddings | None = None
    aliases: dict[str, list[str]] | None = None
    paraphrases: dict[str, list[str]] | None = None


@dataclass
class ModelParams:
    tensors: dict[str, Tensor]
    vocab: Vocab
    labels: LabelSpace
    config: TrainConfig

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def copy(self) -> ModelParams:
        tensors = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()}
        return ModelParams(tensors, self.vocab, self.labels, replace(self.config))


@dataclass
class EncodedBag:
    pair: tuple[str, str]
    relation: int
    subj_types: list[int]
    obj_types: list[int]
    sentences: list[EncodedSentence]


def init_params(config: TrainConfig, vocab: Vocab, labels: LabelSpace,
                pretrained: np.ndarray | None = None) -> ModelParams:
    config.validate()
    rng = np.random.default_rng([config.seed, 0])
    dims = config.encoder_dims()
    tensors = init_encoder_params(dims, len(vocab), rng, pretrained)
    tensors.update(init_side_params(labels.n_relations, labels.n_types, config.rel_dim, config.type_dim, rng))
    width = dims.sentence_width + config.rel_dim
    bound = 1.0 / math.sqrt(width)
    tensors["bag_query"] = Tensor(rng.uniform(-bound, bound, size=width), requires_grad=True)
    cls_in = width + 2 * config.type_dim
    bound = 1.0 / math.sqrt(cls_in)
    tensors["cls_W"] = Tensor(rng.uniform(-bound, bound, size=(labels.n_relations, cls_in)), requires_grad=True)
    tensors["cls_b"] = Tensor(rng.uniform(-bound, bound, size=labels.n_relations), requires_grad=True)
    for name, t in tensors.items():
        t.name = name
    return ModelParams(tensors, vocab, labels, config)


# ---------------------------------------------------------------- preprocessing

class Preprocessor:
    """Turns raw bags into id-level bags with cached graphs and matched relations."""

    def __init__(self, params: ModelParams, resources: SideResources | None = None):
        cfg = params.config
        self.vocab = params.vocab
        self.labels = params.labels
        self.config = cfg
        resources = resources or SideResources()
        self.embeddings = resources.embeddings
        self.index: AliasIndex = build_alias_index(
            params.labels.relations, resources.aliases, resources.paraphrases, cfg.alias_mode, resources.embeddings
        )

    def sentence(self, raw) -> EncodedSentence:
        sent = truncate_sentence(raw, self.config.max_len)
        matched: set[int] = set()
        if len(self.index):
            phrases = extract_phrases(sent, self.config.max_between)
            matched = match_relations(phrases, self.index, self.config.cosine_threshold, self.embeddings)
        return encode_ids(sent, self.vocab, self.config.max_position, sorted(matched))

    def bag(self, bag: Bag) -> EncodedBag:
        known = set(self.labels.types)
        # types outside the inventory fall back to the unknown-type row
        return EncodedBag(
            pair=bag.pair,
            relation=self.labels.relation_id(bag.relation),
            subj_types=self.labels.type_ids(t for t in bag.subj_types if t in known),
            obj_types=self.labels.type_ids(t for t in bag.obj_types if t in known),
            sentences=[self.sentence(s) for s in bag.sentences],
        )

    def dataset(self, bags: Sequence[Bag]) -> list[EncodedBag]:
        return [self.bag(b) for b in bags]


# ---------------------------------------------------------------- forward

def _frozen_row(table: Tensor) -> Tensor:
    return Tensor(table.data[-1].copy())


def sentence_with_side(sent: EncodedSentence, params: ModelParams, flags: Flags = Flags()) -> Tensor:
    t = params.tensors
    s, _ = encode_sentence(sent, t, params.config.n_gcn_layers, flags.use_gcn)
    if flags.use_rel_side:
        h_rel = matched_relation_embedding(sent.matched, t)
    else:
        h_rel = _frozen_row(t["rel_emb"])
    return dm.concat([s, h_rel])


def bag_forward(bag: EncodedBag, params: ModelParams, flags: Flags = Flags(), *,
                dropout_keep: float = 1.0, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Class distribution ``p`` (n_relations,) and sentence attention ``alpha`` (n_sentences,)."""
    t = params.tensors
    rows = [sentence_with_side(s, params, flags) for s in bag.sentences]
    if dropout_keep < 1.0:
        if rng is None:
            raise ContractError("dropout needs a random generator")
        rows = [
            dm.mul(r, Tensor((rng.random(r.shape) < dropout_keep) / dropout_keep)) for r in rows
        ]
    S = dm.stack(rows)
    alpha = dm.softmax_rows(dm.matmul(S, t["bag_query"]))
    B = dm.matmul(alpha, S)
    if flags.use_type_side:
        h_subj = entity_type_embedding(bag.subj_types, t)
        h_obj = entity_type_embedding(bag.obj_types, t)
    else:
        h_subj = h_obj = _frozen_row(t["type_emb"])
    B_hat = dm.concat([B, h_subj, h_obj])
    logits = dm.add(dm.matmul(t["cls_W"], B_hat), t["cls_b"])
    return dm.softmax_rows(logits), alpha


def bag_nll(p: Tensor, gold: int) -> Tensor:
    onehot = np.zeros(p.shape)
    onehot[gold] = 1.0
    return dm.neg(dm.log(dm.matmul(p, Tensor(onehot)), floor=LOG_FLOOR))


def l2_penalty(params: ModelParams) -> Tensor:
    terms = [dm.sum_all(dm.mul(p, p)) for p in params.parameters()]
    total = terms[0]
    for term in terms[1:]:
        total = dm.add(total, term)
    return total


def loss(bags: Sequence[EncodedBag], params: ModelParams, flags: Flags = Flags(), *,
         l2_coeff: float | None = None, dropout_keep: float = 1.0,
         rng: np.random.Generator | None = None, predictions: list[int] | None = None) -> Tensor:
    """Mean negative log-likelihood over ``bags`` plus the L2 term."""
    if not bags:
        raise ContractError("loss needs a non-empty batch")
    l2 = params.config.l2_coeff if l2_coeff is None else l2_coeff
    total = None
    for bag in bags:
        p, _ = bag_forward(bag, params, flags, dropout_keep=dropout_keep, rng=rng)
        if predictions is not None:
            predictions.append(int(np.argmax(p.data)))
        nll = bag_nll(p, bag.relation)
        total = nll if total is None else dm.add(total, nll)
    out = dm.scale(total, 1.0 / len(bags))
    if l2 > 0:
        out = dm.add(out, dm.scale(l2_penalty(params), l2))
    if not math.isfinite(out.item()):
        raise NumericError("loss is not finite")
    return out


# ---------------------------------------------------------------- training

class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def build_model(dataset: Sequence[Bag], config: TrainConfig, resources: SideResources | None = None,
                labels: LabelSpace | None = None) -> ModelParams:
    """Fresh parameters; the word table comes from pretrained embeddings when they are supplied."""
    config.validate()
    labels = labels or LabelSpace.from_dataset(dataset)
    emb = resources.embeddings if resources else None
    if emb is not None:
        if emb.dim != config.word_dim:
            raise ConfigError(f"word_dim {config.word_dim} does not match embedding dimension {emb.dim}")
        return init_params(config, emb.vocab, labels, pretrained=emb.table.data)
    return init_params(config, build_vocab(dataset, config.min_count), labels)


def train(dataset: Sequence[Bag], config: TrainConfig, resources: SideResources | None = None,
          labels: LabelSpace | None = None,
          on_epoch: Callable[[dict, ModelParams], bool | None] | None = None) -> tuple[ModelParams, list[dict]]:
    """Adam over shuffled bag batches.  Returns the final parameters and one history row per epoch.

    ``on_epoch(row, params)`` runs after every epoch; a truthy return stops training early.
    """
    if not dataset:
        raise ContractError("training needs a non-empty dataset")
    params = build_model(dataset, config, resources, labels)
    encoded = Preprocessor(params, resources).dataset(dataset)
    flags = config.flags()
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    opt = Adam(params.parameters(), config.learning_rate)
    history: list[dict] = []
    for epoch in range(1, config.n_epochs + 1):
        order = shuffle_rng.permutation(len(encoded))
        total, correct = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_bags)):
            batch = [encoded[i] for i in order[start: start + config.batch_bags]]
            preds: list[int] = []
            opt.zero_grad()
            try:
                value = loss(batch, params, flags, dropout_keep=config.dropout_keep, rng=dropout_rng,
                             predictions=preds)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            dm.backward(value)
            opt.step()
            total += value.item() * len(batch)
            correct += sum(int(p == bag.relation) for p, bag in zip(preds, batch))
        row = {"epoch": epoch, "loss": total / len(encoded), "accuracy": correct / len(encoded)}
        history.append(row)
        logger.debug("epoch %d loss %.6f acc %.4f", epoch, row["loss"], row["accuracy"])
        if on_epoch is not None and on_epoch(row, params):
            break
    return params, history


# ---------------------------------------------------------------- inference

def predict_proba(bag: EncodedBag, params: ModelParams, flags: Flags = Flags()) -> np.ndarray:
    with dm.no_grad():
        p, _ = bag_forward(bag, params, flags)
    return p.data


def predict(bag: EncodedBag, params: ModelParams, flags: Flags = Flags()) -> list[tuple[int, float]]:
    """(relation id, probability) pairs, most probable first, ties by ascending id."""
    p = predict_proba(bag, params, flags)
    return sorted(((i, float(v)) for i, v in enumerate(p)), key=lambda x: (-x[1], x[0]))


def accuracy(bags: Sequence[EncodedBag], params: ModelParams, flags: Flags = Flags()) -> float:
    hits = sum(int(predict(b, params, flags)[0][0] == b.relation) for b in bags)
    return hits / len(bags)


# ---------------------------------------------------------------- checkpoints

def checkpoint_dict(params: ModelParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "vocab": params.vocab.words,
        "relations": list(params.labels.relations),
        "types": list(params.labels.types),
        "params": {
            name: {"shape": list(t.shape), "data": [float(x) for x in t.data.reshape(-1)]}
            for name, t in params.tensors.items()
        },
    }


def dumps_checkpoint(params: ModelParams) -> str:
    return json.dumps(checkpoint_dict(params), sort_keys=True)


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    Path(path).write_text(dumps_checkpoint(params) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> ModelParams:
    """Read a checkpoint and check every tensor against the shapes its own config implies."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactMismatchError(f"unreadable checkpoint {path}: {exc}") from None
    return checkpoint_from_dict(raw)


def checkpoint_from_dict(raw) -> ModelParams:
    if not isinstance(raw, dict) or raw.get("format") != CHECKPOINT_FORMAT:
        raise ArtifactMismatchError("not a reside checkpoint")
    if raw.get("version") != CHECKPOINT_VERSION:
        raise ArtifactMismatchError(f"unsupported checkpoint version {raw.get('version')!r}")
    try:
        config = TrainConfig.from_dict(raw["config"])
        vocab = Vocab(list(raw["vocab"]))
        labels = LabelSpace(tuple(raw["relations"]), tuple(raw["types"]))
        stored = raw["params"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactMismatchError(f"malformed checkpoint header: {exc}") from None
    expected = init_params(config, vocab, labels)
    tensors: dict[str, Tensor] = {}
    for name, ref in expected.tensors.items():
        if name not in stored:
            raise ArtifactMismatchError(f"checkpoint is missing tensor {name!r}")
        entry = stored[name]
        try:
            shape = tuple(int(d) for d in entry["shape"])
            data = np.array(entry["data"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ArtifactMismatchError(f"tensor {name!r} is malformed: {exc}") from None
        if shape != ref.shape or data.size != math.prod(shape):
            raise ArtifactMismatchError(
                f"tensor {name!r} has shape {shape} with {data.size} values, expected {ref.shape}"
            )
        tensors[name] = Tensor(data.reshape(shape), requires_grad=True, name=name)
    extra = set(stored) - set(expected.tensors)
    if extra:
        raise ArtifactMismatchError(f"checkpoint has unexpected tensor {sorted(extra)[0]!r}")
    return ModelParams(tensors, vocab, labels, config)
