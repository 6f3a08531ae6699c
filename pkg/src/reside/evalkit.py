"""Held-out evaluation: ranked facts, PR curves, P@N, sentence sampling and experiment grids."""

from __future__ import annotations

import csv
import json
import logging
import traceback
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Bag, LabelSpace
from .model import EncodedBag, Flags, ModelParams, Preprocessor, SideResources, TrainConfig, predict_proba, train
from .errors import ContractError

logger = logging.getLogger(__name__)

SENTENCE_MODES = ("one", "two", "all")
DESK_P_AT = (10, 20, 30)

Fact = tuple[tuple[str, str], int]


@dataclass(frozen=True)
class RankedEntry:
    subj: str
    obj: str
    relation: int
    confidence: float

    @property
    def fact(self) -> Fact:
        return ((self.subj, self.obj), self.relation)


@dataclass(frozen=True)
class PRPoint:
    rank: int
    precision: float
    recall: float


def rank_encoded(bags: Sequence[EncodedBag], params: ModelParams, flags: Flags | None = None) -> list[RankedEntry]:
    flags = flags or params.config.flags()
    na = params.labels.na_id
    entries = []
    for bag in bags:
        p = predict_proba(bag, params, flags)
        entries.extend(
            RankedEntry(bag.pair[0], bag.pair[1], rid, float(p[rid])) for rid in range(len(p)) if rid != na
        )
    entries.sort(key=lambda e: (-e.confidence, e.subj, e.obj, e.relation))
    return entries


def held_out_rank(params: ModelParams, dataset: Sequence[Bag], flags: Flags | None = None,
                  resources: SideResources | None = None) -> list[RankedEntry]:
    """Every (pair, non-NA relation, probability) triple, most confident first."""
    return rank_encoded(Preprocessor(params, resources).dataset(dataset), params, flags)


def gold_facts(dataset: Iterable[Bag], labels: LabelSpace) -> set[Fact]:
    """Non-NA (pair, relation) facts; NA bags contribute nothing."""
    na = labels.na_id
    gold = set()
    for bag in dataset:
        rid = labels.relation_id(bag.relation)
        if rid != na:
            gold.add((bag.pair, rid))
    return gold


def pr_curve(ranked: Sequence[RankedEntry], gold: set[Fact]) -> list[PRPoint]:
    if not gold:
        raise ContractError("pr_curve needs a non-empty gold set")
    points, hits = [], 0
    for t, entry in enumerate(ranked, start=1):
        hits += entry.fact in gold
        points.append(PRPoint(t, hits / t, hits / len(gold)))
    return points


def p_at_n(ranked: Sequence[RankedEntry], gold: set[Fact], n: int) -> float:
    if not 1 <= n <= len(ranked):
        raise IndexError(f"P@{n} undefined for a ranking of {len(ranked)} entries")
    return sum(e.fact in gold for e in ranked[:n]) / n


def sample_sentences(dataset: Sequence[Bag], mode: str, seed: int) -> list[Bag]:
    """Keep bags with at least two sentences; for one/two keep that many sentences at random."""
    if mode not in SENTENCE_MODES:
        raise ValueError(f"sentence mode must be one of {SENTENCE_MODES}, got {mode!r}")
    rng = np.random.default_rng(seed)
    keep = {"one": 1, "two": 2}.get(mode)
    out = []
    for bag in dataset:
        n = len(bag.sentences)
        if n < 2:
            continue
        if keep is None:
            out.append(bag)
            continue
        chosen = sorted(rng.choice(n, size=keep, replace=False))
        out.append(replace(bag, sentences=tuple(bag.sentences[i] for i in chosen)))
    return out


def summarize(ranked: Sequence[RankedEntry], gold: set[Fact], ns: Sequence[int] = DESK_P_AT) -> dict:
    return {
        "n_ranked": len(ranked),
        "n_gold": len(gold),
        "p_at": {str(n): (p_at_n(ranked, gold, n) if n <= len(ranked) else None) for n in ns},
        "final_recall": pr_curve(ranked, gold)[-1].recall if ranked else 0.0,
    }


def write_pr_csv(curves: Mapping[str, Sequence[PRPoint]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["config_id", "rank", "precision", "recall"])
        for config_id, points in curves.items():
            for pt in points:
                writer.writerow([config_id, pt.rank, repr(pt.precision), repr(pt.recall)])


def config_id(overrides: Mapping) -> str:
    if "name" in overrides:
        return str(overrides["name"])
    if not overrides:
        return "full"
    return ",".join(f"{k}={overrides[k]}" for k in sorted(overrides))


def run_experiment_grid(train_set: Sequence[Bag], test_set: Sequence[Bag], base_config: TrainConfig,
                        grid: Sequence[Mapping], resources: SideResources | None = None,
                        labels: LabelSpace | None = None, out_dir: str | Path | None = None,
                        ns: Sequence[int] = DESK_P_AT) -> dict:
    """Train and evaluate one model per override dict; a failing configuration does not stop the rest.

    Every configuration shares ``base_config.seed``.  When ``out_dir`` is
    given, ``pr_curves.csv`` and ``summary.json`` are written there.
    """
    labels = labels or LabelSpace.from_dataset([*train_set, *test_set])
    gold = gold_facts(test_set, labels)
    report: dict = {"configs": {}}
    curves: dict[str, list[PRPoint]] = {}
    for overrides in grid:
        cid = config_id(overrides)
        settings = {k: v for k, v in overrides.items() if k != "name"}
        try:
            cfg = replace(base_config, **settings)
            params, history = train(train_set, cfg, resources, labels)
            ranked = held_out_rank(params, test_set, cfg.flags(), resources)
            curves[cid] = pr_curve(ranked, gold)
            report["configs"][cid] = {
                "overrides": settings,
                "status": "ok",
                "final_train_loss": history[-1]["loss"] if history else None,
                **summarize(ranked, gold, ns),
            }
        except Exception as exc:  # noqa: BLE001 - recorded, grid continues
            logger.warning("config %s failed: %s", cid, exc)
            report["configs"][cid] = {
                "overrides": dict(overrides),
                "status": "failed",
                "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc(limit=3),
            }
    report["curves"] = curves
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_pr_csv(curves, out / "pr_curves.csv")
        (out / "summary.json").write_text(
            json.dumps(report["configs"], indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
        )
    return report
