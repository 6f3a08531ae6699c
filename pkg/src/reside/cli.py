"""Command-line entry point.

Exit codes: 0 success, 2 usage/config error, 3 numeric failure during
training, 4 checkpoint/artifact mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from . import evalkit
from .corpus import LabelSpace, load_embeddings, load_jsonl
from .errors import ArtifactMismatchError, ConfigError, NumericError, ParseError
from .model import (
    Flags,
    ModelParams,
    Preprocessor,
    SideResources,
    TrainConfig,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .synth import SynthSpec, split_spec, synth_generate

logger = logging.getLogger("reside")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_ARTIFACT = 0, 2, 3, 4

PATH_KEYS = ("train", "valid", "test", "embeddings", "aliases", "paraphrases")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    train_config: TrainConfig = field(default_factory=TrainConfig)
    train: str | None = None
    valid: str | None = None
    test: str | None = None
    embeddings: str | None = None
    aliases: str | None = None
    paraphrases: str | None = None
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train_config"] = self.train_config.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        data = dict(data)
        tc = TrainConfig.from_dict(data.pop("train_config", {}))
        known = {f.name for f in fields(cls)} - {"train_config"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")
        return cls(train_config=tc, **data)

    def check_paths(self, required: Sequence[str]) -> None:
        for key in required:
            if getattr(self, key) is None:
                raise UsageError(f"--{key} is required")
        for key in PATH_KEYS:
            value = getattr(self, key)
            if value is not None and not Path(value).exists():
                raise UsageError(f"--{key}: no such file {value}")


# ---------------------------------------------------------------- argument plumbing

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model / training")
    for f in fields(TrainConfig):
        if f.type in ("bool", bool) or isinstance(f.default, bool):
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.name == "alias_mode":
            g.add_argument(flag, choices=["none", "one", "one+ppdb", "all"], default=None)
        else:
            kind = float if isinstance(f.default, float) else int if isinstance(f.default, int) else str
            g.add_argument(flag, type=kind, default=None)
    _add_ablation_flags(g)


def _add_ablation_flags(g) -> None:
    g.add_argument("--no-gcn", dest="use_gcn", action="store_false", default=None)
    g.add_argument("--no-rel-side", dest="use_rel_side", action="store_false", default=None)
    g.add_argument("--no-type-side", dest="use_type_side", action="store_false", default=None)


def _add_path_flags(p: argparse.ArgumentParser) -> None:
    for key in PATH_KEYS:
        p.add_argument(f"--{key}", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--config", default=None, help="JSON run config; flags override it")


def _resolve(args: argparse.Namespace) -> RunConfig:
    if args.config:
        try:
            run = RunConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise UsageError(f"--config: no such file {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"--config: invalid JSON ({exc.msg})") from None
    else:
        run = RunConfig()
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(TrainConfig)
        if getattr(args, f.name, None) is not None
    }
    if "cosine_threshold" not in overrides and getattr(args, "cosine_threshold", None) is not None:
        overrides["cosine_threshold"] = args.cosine_threshold
    run.train_config = replace(run.train_config, **overrides)
    for key in PATH_KEYS:
        if getattr(args, key, None) is not None:
            setattr(run, key, getattr(args, key))
    if getattr(args, "out_dir", None) is not None:
        run.out_dir = args.out_dir
    if run.embeddings and "word_dim" not in overrides:
        run.train_config.word_dim = _embedding_dim(run.embeddings)
    run.train_config.validate()
    return run


def _embedding_dim(path: str) -> int:
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if parts:
                    return len(parts) - 1
    except FileNotFoundError:
        raise UsageError(f"--embeddings: no such file {path}") from None
    raise UsageError(f"--embeddings: file {path} is empty")


def _resources(run: RunConfig) -> SideResources:
    emb = load_embeddings(run.embeddings, run.train_config.word_dim) if run.embeddings else None

    def read(path):
        return json.loads(Path(path).read_text(encoding="utf-8")) if path else None

    return SideResources(emb, read(run.aliases), read(run.paraphrases))


def _flags_from(args: argparse.Namespace, base: Flags) -> Flags:
    return Flags(
        use_gcn=base.use_gcn if args.use_gcn is None else args.use_gcn,
        use_rel_side=base.use_rel_side if args.use_rel_side is None else args.use_rel_side,
        use_type_side=base.use_type_side if args.use_type_side is None else args.use_type_side,
    )


def _write_history(history: list[dict], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "accuracy"])
        for row in history:
            w.writerow([row["epoch"], repr(row["loss"]), repr(row["accuracy"])])


def _labels_for(run: RunConfig, *datasets) -> LabelSpace:
    bags = [b for ds in datasets for b in ds]
    labels = LabelSpace.from_dataset(bags)
    if run.aliases:
        # relations named only in the alias file still get a class
        extra = set(json.loads(Path(run.aliases).read_text(encoding="utf-8"))) - set(labels.relations)
        labels = LabelSpace(labels.relations + tuple(sorted(extra)), labels.types)
    return labels


# ---------------------------------------------------------------- commands

def cmd_train(args: argparse.Namespace) -> int:
    run = _resolve(args)
    run.check_paths(["train"])
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_jsonl(run.train)
    test = load_jsonl(run.test) if run.test else []
    params, history = train(dataset, run.train_config, _resources(run), _labels_for(run, dataset, test))
    save_checkpoint(params, out / "checkpoint.json")
    _write_history(history, out / "history.csv")
    (out / "resolved_config.json").write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"trained {len(history)} epochs; final loss {history[-1]['loss']:.6f}" if history else "trained 0 epochs")
    return EXIT_OK


def _load_model(args, run: RunConfig) -> ModelParams:
    ckpt = args.checkpoint or str(Path(run.out_dir) / "checkpoint.json")
    if not Path(ckpt).exists():
        raise UsageError(f"--checkpoint: no such file {ckpt}")
    params = load_checkpoint(ckpt)
    if run.embeddings and params.config.word_dim != run.train_config.word_dim:
        raise ArtifactMismatchError(
            f"tensor 'word_emb' has width {params.config.word_dim}, embeddings have {run.train_config.word_dim}"
        )
    return params


def cmd_eval(args: argparse.Namespace) -> int:
    run = _resolve(args)
    run.check_paths(["test"])
    params = _load_model(args, run)
    # matching settings come from the checkpoint unless overridden on the command line
    cfg = params.config
    if args.alias_mode is not None:
        cfg.alias_mode = args.alias_mode
    if args.cosine_threshold is not None:
        cfg.cosine_threshold = args.cosine_threshold
    cfg.validate()
    flags = _flags_from(args, cfg.flags())
    test = evalkit.sample_sentences(load_jsonl(run.test), args.sentences, cfg.seed) if args.sentences != "all" or args.multi_only else load_jsonl(run.test)
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gold = evalkit.gold_facts(test, params.labels)
    if not gold:
        raise UsageError("test set has no non-NA facts to evaluate against")
    ranked = evalkit.held_out_rank(params, test, flags, _resources(run))
    curve = evalkit.pr_curve(ranked, gold)
    tag = args.tag or f"sentences={args.sentences}"
    evalkit.write_pr_csv({tag: curve}, out / "pr_curve.csv")
    summary = {"config_id": tag, "sentences": args.sentences, "n_bags": len(test), **evalkit.summarize(ranked, gold)}
    (out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary["p_at"], sort_keys=True))
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    run = _resolve(args)
    run.check_paths(["test"])
    params = _load_model(args, run)
    flags = _flags_from(args, params.config.flags())
    pre = Preprocessor(params, _resources(run))
    sink = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for bag in load_jsonl(run.test):
            ranking = predict(pre.bag(bag), params, flags)
            row = {
                "subj": bag.subj,
                "obj": bag.obj,
                "ranking": [[params.labels.relations[i], p] for i, p in ranking[: args.top_k]],
            }
            sink.write(json.dumps(row) + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
    return EXIT_OK


def _synth_spec(args: argparse.Namespace) -> SynthSpec:
    spec = SynthSpec(
        n_relations=args.n_relations,
        n_type_classes=args.n_types,
        n_bags=args.n_bags,
        sentences_per_bag=(args.min_sentences, args.max_sentences),
        vocab_size=args.vocab_size,
        noise_rate=args.noise_rate,
        seed=args.seed,
        n_alt_triggers=args.n_alt_triggers,
        alt_trigger_rate=args.alt_trigger_rate,
        na_rate=args.na_rate,
        embed_dim=args.embed_dim,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return spec


def cmd_synth(args: argparse.Namespace) -> int:
    spec = _synth_spec(args)
    out = Path(args.out_dir)
    result = synth_generate(spec)
    result.write(out)
    if args.test_bags:
        test_spec = split_spec(spec, bag_seed=spec.seed + 1_000_003, n_bags=args.test_bags,
                               alt_trigger_rate=args.test_alt_trigger_rate)
        test = synth_generate(test_spec)
        from .corpus import save_jsonl

        save_jsonl(test.dataset, out / "test.jsonl")
    print(f"wrote {len(result.dataset)} bags to {out}")
    return EXIT_OK


def cmd_grid(args: argparse.Namespace) -> int:
    run = _resolve(args)
    run.check_paths(["train", "test"])
    if not args.grid or not Path(args.grid).exists():
        raise UsageError("--grid must name a JSON file holding a list of override objects")
    grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    if not isinstance(grid, list) or not all(isinstance(g, dict) for g in grid):
        raise UsageError("--grid must hold a JSON list of objects")
    train_set, test_set = load_jsonl(run.train), load_jsonl(run.test)
    if args.sentences != "all":
        test_set = evalkit.sample_sentences(test_set, args.sentences, run.train_config.seed)
    report = evalkit.run_experiment_grid(
        train_set, test_set, run.train_config, grid, _resources(run), _labels_for(run, train_set, test_set),
        out_dir=run.out_dir,
    )
    for cid, entry in report["configs"].items():
        print(cid, entry["status"], json.dumps(entry.get("p_at")))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reside", description="Side-information relation extraction")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_path_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func in (("eval", cmd_eval), ("predict", cmd_predict)):
        p = sub.add_parser(name, help=f"{name} with a trained checkpoint")
        _add_path_flags(p)
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--alias-mode", choices=["none", "one", "one+ppdb", "all"], default=None)
        p.add_argument("--cosine-threshold", type=float, default=None)
        _add_ablation_flags(p)
        if name == "eval":
            p.add_argument("--sentences", choices=evalkit.SENTENCE_MODES, default="all")
            p.add_argument("--multi-only", action="store_true",
                           help="with --sentences all, also drop single-sentence bags")
            p.add_argument("--tag", default=None)
        else:
            p.add_argument("--output", default=None)
            p.add_argument("--top-k", type=int, default=5)
        p.set_defaults(func=func)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-relations", type=int, default=3)
    p.add_argument("--n-types", type=int, default=4)
    p.add_argument("--n-bags", type=int, default=30)
    p.add_argument("--min-sentences", type=int, default=1)
    p.add_argument("--max-sentences", type=int, default=3)
    p.add_argument("--vocab-size", type=int, default=40)
    p.add_argument("--noise-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-alt-triggers", type=int, default=0)
    p.add_argument("--alt-trigger-rate", type=float, default=0.0)
    p.add_argument("--na-rate", type=float, default=0.0)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--test-bags", type=int, default=0)
    p.add_argument("--test-alt-trigger-rate", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("grid", help="train and evaluate a grid of configurations")
    _add_path_flags(p)
    _add_train_flags(p)
    p.add_argument("--grid", default=None)
    p.add_argument("--sentences", choices=evalkit.SENTENCE_MODES, default="all")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"reside {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ParseError) as exc:
        print(f"reside {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"reside {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ArtifactMismatchError as exc:
        print(f"reside {args.command}: artifact mismatch: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
