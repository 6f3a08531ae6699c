import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from reside.corpus import Bag, build_vocab  # noqa: E402
from reside.model import Preprocessor, SideResources, TrainConfig, init_params  # noqa: E402
from reside.synth import SynthSpec, synth_generate  # noqa: E402

TINY = dict(word_dim=16, pos_dim=2, d_gru=4, d_gcn=3, rel_dim=3, type_dim=2, max_position=5,
            dropout_keep=1.0, l2_coeff=1e-3, seed=3)


@pytest.fixture(scope="session")
def synth_small():
    return synth_generate(SynthSpec(n_relations=3, n_type_classes=3, n_bags=12, noise_rate=0.2, seed=5))


@pytest.fixture(scope="session")
def short_bag(synth_small):
    """Two sentences of at most six tokens drawn from the synthetic corpus."""
    short = [s for b in synth_small.dataset for s in b.sentences if len(s.tokens) <= 6]
    src = synth_small.dataset[0]
    return Bag(src.subj, src.obj, src.relation, tuple(short[:2]), src.subj_types, src.obj_types)


@pytest.fixture
def tiny_model(synth_small, short_bag):
    """Small randomly initialised model plus the encoded short bag; word table from the bag only."""
    cfg = TrainConfig(**TINY, alias_mode="all")
    res = SideResources(synth_small.embeddings(), synth_small.aliases, synth_small.paraphrases)
    vocab = build_vocab([short_bag])
    cfg.word_dim = 4
    params = init_params(cfg, vocab, synth_small.labels)
    encoded = Preprocessor(params, res).bag(short_bag)
    return params, encoded


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
