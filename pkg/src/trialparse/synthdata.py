"""Deterministic synthetic criteria corpus for end-to-end training tests.

Criteria are built from templates with entity slots filled from small
term banks (5 entity types, roughly 300 distinct lowercase words), so
gold BIO tags are known by construction. The same seed always yields the
same corpus.
"""

from dataclasses import dataclass

import numpy as np

from .corpus import Criterion, EntityMention, TaggedSequence, encode_bio, tokenize

SYNTH_ENTITY_TYPES = ("AGE", "CANCER", "CHRONIC_DISEASE", "CLINICAL_VARIABLE", "TREATMENT")

_TERMS: dict[str, list[str]] = {
    "CHRONIC_DISEASE": [
        "diabetes mellitus",
        "heart failure",
        "chronic kidney disease",
        "hypertension",
        "asthma",
        "copd",
        "liver cirrhosis",
        "rheumatoid arthritis",
        "hiv infection",
        "chronic hepatitis",
        "atrial fibrillation",
        "coronary artery disease",
        "chronic bronchitis",
        "epilepsy",
        "osteoporosis",
        "obstructive sleep apnea",
    ],
    "TREATMENT": [
        "mechanical ventilation",
        "hydroxychloroquine",
        "remdesivir",
        "systemic corticosteroids",
        "immunosuppressive agents",
        "convalescent plasma",
        "azithromycin",
        "tocilizumab",
        "renal replacement therapy",
        "supplemental oxygen therapy",
        "therapeutic anticoagulation",
        "vasopressor support",
        "antiviral therapy",
        "cytotoxic chemotherapy",
        "monoclonal antibodies",
    ],
    "CANCER": [
        "active hematologic malignancy",
        "metastatic melanoma",
        "lung carcinoma",
        "breast cancer",
        "prostate cancer",
        "hodgkin lymphoma",
        "acute leukemia",
        "colorectal cancer",
        "pancreatic cancer",
        "ovarian cancer",
        "squamous cell carcinoma",
        "multiple myeloma",
    ],
    "CLINICAL_VARIABLE": [
        "oxygen saturation",
        "respiratory rate",
        "serum creatinine",
        "body mass index",
        "resting heart rate",
        "systolic blood pressure",
        "aspartate aminotransferase",
        "alanine aminotransferase",
        "white blood cell count",
        "platelet count",
        "pao2/fio2 ratio",
        "hemoglobin level",
        "total bilirubin",
        "creatinine clearance",
        "ejection fraction",
    ],
}

_AGE_BOUNDS = ["18", "21", "40", "50", "60", "65", "70", "75", "80", "85"]
_AGE_SHAPES = ["age over {} years", "age under {} years", "older than {} years old"]

# {TYPE} slots are filled from the term banks; plain words stay as is.
_TEMPLATES = [
    "patients with {CHRONIC_DISEASE}",
    "history of {CHRONIC_DISEASE} or {CANCER}",
    "subjects currently receiving {TREATMENT}",
    "{AGE} at the screening visit",
    "documented {CANCER} within the last five years",
    "requires {TREATMENT} at baseline",
    "{CLINICAL_VARIABLE} above the upper normal range",
    "abnormal {CLINICAL_VARIABLE} at enrollment",
    "no prior {TREATMENT} for {CHRONIC_DISEASE}",
    "{AGE} and willing to comply with study procedures",
    "known {CHRONIC_DISEASE} requiring {TREATMENT}",
    "diagnosis of {CANCER} confirmed by biopsy",
    "{CLINICAL_VARIABLE} below the protocol limit",
    "stable {CHRONIC_DISEASE} for at least six months",
    "exclusion for {CANCER} under active treatment",
    "combination of {TREATMENT} and {TREATMENT} is not allowed",
    "currently enrolled in another interventional study",
    "unable to return for scheduled follow up visits",
    "participation in a prior investigational drug study",
]


@dataclass
class SyntheticCorpus:
    train: list[TaggedSequence]
    test: list[TaggedSequence]
    entity_types: tuple[str, ...] = SYNTH_ENTITY_TYPES

    def gold_mentions(self, split: str) -> list[EntityMention]:
        from .corpus import decode_bio

        sequences = self.train if split == "train" else self.test
        return [m for seq in sequences for m in decode_bio(seq)]


def _fill_term(rng: np.random.Generator, entity_type: str) -> list[str]:
    if entity_type == "AGE":
        shape = _AGE_SHAPES[rng.integers(len(_AGE_SHAPES))]
        return shape.format(_AGE_BOUNDS[rng.integers(len(_AGE_BOUNDS))]).split()
    bank = _TERMS[entity_type]
    return bank[rng.integers(len(bank))].split()


def _build_sequence(rng: np.random.Generator, trial_id: str) -> TaggedSequence:
    template = _TEMPLATES[rng.integers(len(_TEMPLATES))]
    words: list[str] = []
    spans: list[tuple[int, int, str]] = []
    for piece in template.split():
        if piece.startswith("{") and piece.endswith("}"):
            entity_type = piece[1:-1]
            term_words = _fill_term(rng, entity_type)
            spans.append((len(words), len(words) + len(term_words) - 1, entity_type))
            words.extend(term_words)
        else:
            words.append(piece)
    text = " ".join(words)
    criterion = Criterion(trial_id=trial_id, arm="inclusion", index=0, text=text, tokens=tokenize(text))
    if len(criterion.tokens) != len(words):
        raise AssertionError(f"term bank word {text!r} does not tokenize one-to-one")
    mentions = [
        EntityMention(
            criterion_ref=criterion.ref,
            entity_type=entity_type,
            first=first,
            last=last,
            surface=criterion.text[criterion.tokens[first].start : criterion.tokens[last].end],
        )
        for first, last, entity_type in spans
    ]
    return encode_bio(criterion, mentions)


def generate_corpus(seed: int = 0, n_train: int = 400, n_test: int = 100) -> SyntheticCorpus:
    """Template-injected criteria split into train and test sets."""
    rng = np.random.default_rng([seed, 20_24])
    train = [_build_sequence(rng, f"synth-train-{i:04d}") for i in range(n_train)]
    test = [_build_sequence(rng, f"synth-test-{i:04d}") for i in range(n_test)]
    return SyntheticCorpus(train=train, test=test)
