import numpy as np
import pytest

from mltts.config import TrainingConfig
from mltts.corpus import SyntheticCorpusSpec, generate_corpus
from mltts.model import MultilingualTTS

SEEDS = list(range(20))

TINY_DIMS = dict(embed_dim=6, hidden_dim=6, num_blocks=1, num_heads=2, ffn_dim=8, window=2)
TINY_CORPUS = dict(num_languages=2, speakers_per_language=2, phonemes_per_language=5,
                   utterances_per_speaker=3, feature_dim=4, min_phonemes=3, max_phonemes=5)


def tiny_config(**kw) -> TrainingConfig:
    base = dict(TINY_DIMS, total_steps=10, batch_size=4, ddp_layers=1, classifier_layers=1)
    base.update(kw)
    return TrainingConfig(**base)


def tiny_spec(**kw) -> SyntheticCorpusSpec:
    return SyntheticCorpusSpec(**{**TINY_CORPUS, **kw})


@pytest.fixture
def tiny_corpus():
    return generate_corpus(tiny_spec())


@pytest.fixture
def tiny_model(tiny_corpus):
    return MultilingualTTS(tiny_config(), tiny_corpus.spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
