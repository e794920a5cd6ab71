from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parent.parent
DATA = REPO / "data"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return GOLDEN


@pytest.fixture(scope="session")
def sample_trials_path() -> Path:
    return DATA / "sample_trials.jsonl"


@pytest.fixture(scope="session")
def sample_lexicon_path() -> Path:
    return DATA / "sample_lexicon.tsv"


@pytest.fixture(scope="session")
def default_rules_path() -> Path:
    return DATA / "default_rules.tsv"


@pytest.fixture(scope="session")
def sample_gold_path() -> Path:
    return DATA / "sample_gold_mentions.jsonl"


@pytest.fixture(scope="session")
def sample_lexicon(sample_lexicon_path):
    from trialparse import lexicon

    return lexicon.load_lexicon(sample_lexicon_path)


@pytest.fixture(scope="session")
def default_rules(default_rules_path):
    from trialparse import normalizer

    return normalizer.load_rules(default_rules_path)
