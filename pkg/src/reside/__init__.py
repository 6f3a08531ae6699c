"""Relation extraction from bags of sentences with syntactic and side information."""

from .corpus import Bag, LabelSpace, SentenceInstance, Vocab, load_jsonl, save_jsonl
from .model import Flags, SideResources, TrainConfig, load_checkpoint, save_checkpoint, train
from .synth import SynthSpec, synth_generate

__all__ = [
    "Bag",
    "Flags",
    "LabelSpace",
    "SentenceInstance",
    "SideResources",
    "SynthSpec",
    "TrainConfig",
    "Vocab",
    "load_checkpoint",
    "load_jsonl",
    "save_checkpoint",
    "save_jsonl",
    "synth_generate",
    "train",
]
__version__ = "0.1.0"
