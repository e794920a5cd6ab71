"""Eligibility-criteria parsing for clinical trials.

Pipeline pieces: corpus ingestion and BIO codec, a from-scratch
attention-BiLSTM-CRF tagger with its trainer, an ontology/lexicon
baseline matcher, fuzzy + rule normalization into design variables, an
entity-level evaluator, and cross-trial frequency aggregation. See the
README and demos/ for worked examples.
"""

from . import corpus, crf, evalkit, lexicon, network, normalizer, numcore, patterns, synthdata, trainer
from .errors import ConfigError, DataFormatError, NumericsError, TrialParseError

__all__ = [
    "corpus",
    "crf",
    "evalkit",
    "lexicon",
    "network",
    "normalizer",
    "numcore",
    "patterns",
    "synthdata",
    "trainer",
    "ConfigError",
    "DataFormatError",
    "NumericsError",
    "TrialParseError",
]

__version__ = "0.1.0"
