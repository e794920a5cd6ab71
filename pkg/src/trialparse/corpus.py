"""Trial ingestion, criterion segmentation, tokenization, and the BIO codec.

Everything here is pure: records and criteria are plain dataclasses, and
the segmenter is rule-based (headings, bullets, sentence terminators),
which suits the list-like shape of eligibility text. Offsets are always
character offsets into the owning criterion's text.
"""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataFormatError

ARM_INCLUSION = "inclusion"
ARM_EXCLUSION = "exclusion"
ARMS = (ARM_INCLUSION, ARM_EXCLUSION)

# The 11 default criterion-variable types, upper-snake tag names.
DEFAULT_ENTITY_TYPES = (
    "ALLERGY",
    "CHRONIC_DISEASE",
    "CANCER",
    "PREGNANCY",
    "CONSENT",
    "TREATMENT",
    "CLINICAL_VARIABLE",
    "LANGUAGE_FLUENCY",
    "TECHNOLOGY_ACCESS",
    "GENDER",
    "AGE",
)

_INCLUSION_HEADING = "inclusion criteria:"
_EXCLUSION_HEADING = "exclusion criteria:"

# Leading bullet ("-", "*", "•") or numbered-list prefix ("1.", "2)", "(3)")
# followed by whitespace or end of segment; the boundary requirement keeps
# "3.5" or "18," at segment start intact.
_BULLET_RE = re.compile(r"^\s*(?:[-*•]+|\(?\d+[.)])(?:\s+|$)")

# A mid-line "2." list prefix loses its dot to the terminator split and
# survives bullet stripping as a bare number; such segments are numbering
# noise, not criteria.
_LIST_INDEX_RE = re.compile(r"\(?\d{1,2}[.)]?")


@dataclass(frozen=True)
class Token:
    """One whitespace-free token with [start, end) offsets into its text."""

    surface: str
    start: int
    end: int


@dataclass
class TrialRecord:
    """A registry study: id, condition labels, free-text eligibility criteria.

    exclusion_reason is set when the record fails the ingest filters (no
    eligibility text, or neither criteria heading present); such records
    are kept, flagged, and skipped by segmentation.
    """

    trial_id: str
    conditions: list[str]
    eligibility_text: str
    exclusion_reason: str | None = None

    @property
    def excluded(self) -> bool:
        return self.exclusion_reason is not None


@dataclass
class Criterion:
    """One segmented criterion sentence of a trial arm, tokenized."""

    trial_id: str
    arm: str
    index: int
    text: str
    tokens: list[Token] = field(default_factory=list)

    @property
    def ref(self) -> tuple[str, str, int]:
        return (self.trial_id, self.arm, self.index)


@dataclass
class TaggedSequence:
    """A criterion plus one BIO tag string per token."""

    criterion: Criterion
    tags: list[str]

    def __post_init__(self):
        if len(self.tags) != len(self.criterion.tokens):
            raise ValueError(
                f"{len(self.tags)} tags for {len(self.criterion.tokens)} tokens"
            )


@dataclass(frozen=True)
class EntityMention:
    """A typed token span in one criterion, with a confidence in [0, 1]."""

    criterion_ref: tuple[str, str, int]
    entity_type: str
    first: int
    last: int
    surface: str
    confidence: float = 1.0

    def __post_init__(self):
        if not 0 <= self.first <= self.last:
            raise ValueError(f"bad token span [{self.first}, {self.last}]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def key(self) -> tuple:
        """Identity used for exact-match evaluation (no surface/confidence)."""
        return (self.criterion_ref, self.first, self.last, self.entity_type)


class TagSet:
    """An ordered entity-type inventory and its BIO tag indexing.

    Tag order is fixed as O, then B-/I- pairs in type order, so tag ids
    are stable given the type list.
    """

    def __init__(self, entity_types=DEFAULT_ENTITY_TYPES):
        types = list(entity_types)
        if not types:
            raise ValueError("empty entity-type inventory")
        if len(set(types)) != len(types):
            raise ValueError("duplicate entity types in inventory")
        self.entity_types: list[str] = types
        self.tags: list[str] = ["O"]
        for t in types:
            self.tags.append(f"B-{t}")
            self.tags.append(f"I-{t}")
        self._tag_to_index = {tag: i for i, tag in enumerate(self.tags)}

    def __len__(self) -> int:
        return len(self.tags)

    def __eq__(self, other) -> bool:
        return isinstance(other, TagSet) and self.entity_types == other.entity_types

    def tag_index(self, tag: str) -> int:
        try:
            return self._tag_to_index[tag]
        except KeyError:
            raise ValueError(f"tag {tag!r} not in the configured tag set") from None

    def tag_name(self, index: int) -> str:
        return self.tags[index]

    def begin_index(self, entity_type: str) -> int:
        return self.tag_index(f"B-{entity_type}")

    def inside_index(self, entity_type: str) -> int:
        return self.tag_index(f"I-{entity_type}")

    @classmethod
    def load(cls, path) -> "TagSet":
        """Read one entity type per line; blank lines and '#' comments skipped."""
        types = []
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if line and not line.startswith("#"):
                types.append(line)
        if not types:
            raise DataFormatError("tag-set file lists no entity types", path=str(path))
        return cls(types)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.entity_types), encoding="utf-8")


def tokenize(text: str) -> list[Token]:
    """Split text into offset-exact tokens.

    Whitespace separates tokens; punctuation characters become separate
    single-character tokens, except that "/" or "." flanked by
    alphanumerics stays inside the token ("pao2/fio2", "3.5"). Offsets
    index the original string, surfaces keep their original case.
    """
    tokens: list[Token] = []
    n = len(text)
    i = 0
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        k = i
        while k < j:
            if text[k].isalnum():
                m = k + 1
                while m < j:
                    ch = text[m]
                    if ch.isalnum():
                        m += 1
                    elif ch in "/." and m + 1 < j and text[m + 1].isalnum():
                        m += 2  # joiner plus the alphanumeric after it
                    else:
                        break
                tokens.append(Token(text[k:m], k, m))
                k = m
            else:
                tokens.append(Token(text[k], k, k + 1))
                k += 1
        i = j
    return tokens


def load_trials(path) -> list[TrialRecord]:
    """Read trials.jsonl: one {"trial_id", "conditions", "eligibility_text"} per line.

    Records that fail the ingest filters come back flagged with an
    exclusion_reason rather than silently dropped. Malformed JSON or a
    missing/duplicate trial_id raises DataFormatError naming the line.
    """
    path = Path(path)
    records: list[TrialRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"malformed JSON ({exc.msg})", path=str(path), line=lineno) from exc
            if not isinstance(obj, dict):
                raise DataFormatError("record is not a JSON object", path=str(path), line=lineno)
            trial_id = obj.get("trial_id")
            if not trial_id or not isinstance(trial_id, str):
                raise DataFormatError("missing or empty trial_id", path=str(path), line=lineno)
            if trial_id in seen:
                raise DataFormatError(f"duplicate trial_id {trial_id!r}", path=str(path), line=lineno)
            seen.add(trial_id)
            conditions = obj.get("conditions", [])
            if not isinstance(conditions, list) or not all(isinstance(c, str) for c in conditions):
                raise DataFormatError("conditions must be a list of strings", path=str(path), line=lineno)
            text = obj.get("eligibility_text", "")
            if not isinstance(text, str):
                raise DataFormatError("eligibility_text must be a string", path=str(path), line=lineno)
            record = TrialRecord(trial_id=trial_id, conditions=list(conditions), eligibility_text=text)
            lower = text.lower()
            if not text.strip():
                record.exclusion_reason = "no eligibility text"
            elif _INCLUSION_HEADING not in lower and _EXCLUSION_HEADING not in lower:
                record.exclusion_reason = "missing criteria headings"
            records.append(record)
    return records


def _arm_spans(text: str) -> dict[str, str]:
    """Slice the raw text into per-arm spans following the two headings."""
    lower = text.lower()
    spans: dict[str, str] = {}
    inc = lower.find(_INCLUSION_HEADING)
    exc = lower.find(_EXCLUSION_HEADING)
    if inc >= 0:
        start = inc + len(_INCLUSION_HEADING)
        end = exc if exc > inc else len(text)
        spans[ARM_INCLUSION] = text[start:end]
    if exc >= 0:
        start = exc + len(_EXCLUSION_HEADING)
        end = inc if inc > exc else len(text)
        spans[ARM_EXCLUSION] = text[start:end]
    return spans


def _split_terminators(piece: str) -> list[str]:
    """Split on '.' and ';', keeping '.' that joins alphanumerics (decimals)."""
    parts: list[str] = []
    buf: list[str] = []
    for i, ch in enumerate(piece):
        if ch == ";" or (
            ch == "."
            and not (
                i > 0
                and i + 1 < len(piece)
                and piece[i - 1].isalnum()
                and piece[i + 1].isalnum()
            )
        ):
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    parts.append("".join(buf))
    return parts


def _strip_bullets(piece: str) -> str:
    while True:
        stripped = _BULLET_RE.sub("", piece, count=1)
        if stripped == piece:
            return piece.strip()
        piece = stripped


def _segment_arm(arm_text: str) -> list[str]:
    segments: list[str] = []
    for raw_line in re.split(r"\n+", arm_text):
        line = _strip_bullets(raw_line)
        for piece in _split_terminators(line):
            piece = _strip_bullets(piece)
            if piece and not _LIST_INDEX_RE.fullmatch(piece):
                segments.append(piece)
    return segments


def segment_criteria(record: TrialRecord) -> list[Criterion]:
    """Split an ingested record into tokenized criterion sentences.

    Inclusion text runs from after "inclusion criteria:" to the exclusion
    heading (or end of text); exclusion text runs from after "exclusion
    criteria:". Each arm is split on newline runs, leading bullet or
    numbered-list markers, and sentence terminators; empty segments are
    discarded. Raises ValueError for records flagged excluded.
    """
    if record.excluded:
        raise ValueError(
            f"trial {record.trial_id} is flagged excluded ({record.exclusion_reason})"
        )
    criteria: list[Criterion] = []
    spans = _arm_spans(record.eligibility_text)
    for arm in ARMS:
        for index, segment in enumerate(_segment_arm(spans.get(arm, ""))):
            criteria.append(
                Criterion(
                    trial_id=record.trial_id,
                    arm=arm,
                    index=index,
                    text=segment,
                    tokens=tokenize(segment),
                )
            )
    return criteria


def encode_bio(criterion: Criterion, mentions) -> TaggedSequence:
    """Encode non-overlapping mentions over a criterion as BIO tags."""
    n = len(criterion.tokens)
    ordered = sorted(mentions, key=lambda m: (m.first, m.last))
    for m in ordered:
        if m.last >= n:
            raise ValueError(f"mention span [{m.first}, {m.last}] outside 0..{n - 1}")
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.first <= prev.last:
            raise ValueError(
                "overlapping mentions: "
                f"[{prev.first}, {prev.last}] {prev.entity_type} and "
                f"[{cur.first}, {cur.last}] {cur.entity_type}"
            )
    tags = ["O"] * n
    for m in ordered:
        tags[m.first] = f"B-{m.entity_type}"
        for i in range(m.first + 1, m.last + 1):
            tags[i] = f"I-{m.entity_type}"
    return TaggedSequence(criterion=criterion, tags=tags)


def _parse_tag(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
        return tag[0], tag[2:]
    raise ValueError(f"malformed tag {tag!r}")


def decode_bio(tagged: TaggedSequence, confidence: float = 1.0) -> list[EntityMention]:
    """Decode BIO tags into mentions; total over any tag order.

    A lone I-X (sequence start, after O, or after a different type) is
    repaired as B-X, so model output never needs post-hoc validation.
    """
    criterion = tagged.criterion
    mentions: list[EntityMention] = []
    start: int | None = None
    current_type: str | None = None

    def flush(end_index: int):
        nonlocal start, current_type
        if start is not None:
            surface = criterion.text[criterion.tokens[start].start : criterion.tokens[end_index].end]
            mentions.append(
                EntityMention(
                    criterion_ref=criterion.ref,
                    entity_type=current_type,
                    first=start,
                    last=end_index,
                    surface=surface,
                    confidence=confidence,
                )
            )
        start, current_type = None, None

    for i, tag in enumerate(tagged.tags):
        prefix, etype = _parse_tag(tag)
        if prefix == "O":
            flush(i - 1)
        elif prefix == "B" or etype != current_type:
            flush(i - 1)
            start, current_type = i, etype
    flush(len(tagged.tags) - 1)
    return mentions


# --- file formats ---------------------------------------------------------


def write_criteria_jsonl(criteria, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for c in criteria:
            obj = {
                "trial_id": c.trial_id,
                "arm": c.arm,
                "index": c.index,
                "text": c.text,
                "tokens": [{"surface": t.surface, "start": t.start, "end": t.end} for t in c.tokens],
            }
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")


def read_criteria_jsonl(path) -> list[Criterion]:
    path = Path(path)
    criteria: list[Criterion] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                tokens = [Token(t["surface"], t["start"], t["end"]) for t in obj["tokens"]]
                criterion = Criterion(
                    trial_id=obj["trial_id"],
                    arm=obj["arm"],
                    index=obj["index"],
                    text=obj["text"],
                    tokens=tokens,
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataFormatError(f"malformed criteria record ({exc})", path=str(path), line=lineno) from exc
            if criterion.arm not in ARMS:
                raise DataFormatError(f"unknown arm {criterion.arm!r}", path=str(path), line=lineno)
            criteria.append(criterion)
    return criteria


def write_conll(sequences, path) -> None:
    """Write "token<TAB>tag" lines, one blank line between sentences."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for seq in sequences:
            for token, tag in zip(seq.criterion.tokens, seq.tags):
                fh.write(f"{token.surface}\t{tag}\n")
            fh.write("\n")


def read_conll(path, trial_prefix: str = "conll") -> list[TaggedSequence]:
    """Read a CoNLL file into tagged sequences with synthetic criterion refs.

    Each sentence becomes one Criterion with trial_id "<prefix>-<ordinal>",
    inclusion arm, index 0; text is the space-joined tokens.
    """
    path = Path(path)
    sequences: list[TaggedSequence] = []
    surfaces: list[str] = []
    tags: list[str] = []

    def flush():
        nonlocal surfaces, tags
        if surfaces:
            text = " ".join(surfaces)
            criterion = Criterion(
                trial_id=f"{trial_prefix}-{len(sequences)}",
                arm=ARM_INCLUSION,
                index=0,
                text=text,
                tokens=tokenize(text),
            )
            if len(criterion.tokens) != len(surfaces):
                # Surfaces that re-tokenize differently would desync tags.
                raise DataFormatError(
                    f"sentence {len(sequences)} does not tokenize back to its own tokens",
                    path=str(path),
                )
            sequences.append(TaggedSequence(criterion=criterion, tags=tags))
        surfaces, tags = [], []

    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush()
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataFormatError("expected 'token<TAB>tag'", path=str(path), line=lineno)
            if parts[0] != parts[0].strip() or any(ch.isspace() for ch in parts[0]):
                raise DataFormatError(f"token {parts[0]!r} contains whitespace", path=str(path), line=lineno)
            _parse_tag(parts[1])
            surfaces.append(parts[0])
            tags.append(parts[1])
    flush()
    return sequences
