"""Ontology/gazetteer baseline: load a concept lexicon and scan criteria.

Matching is token-sequence based at word boundaries (never substring, so
"age" cannot fire inside "coverage"), case-insensitive, and resolved
longest-span-first then leftmost. No stemming, no fuzzy logic here; the
approximate linking lives in the normalizer.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Criterion, EntityMention, tokenize
from .errors import DataFormatError

logger = logging.getLogger(__name__)


def canonical(text: str) -> str:
    """Lowercase and collapse internal whitespace; the stored name form."""
    return " ".join(text.lower().split())


def _name_key(name: str) -> tuple[str, ...]:
    """Token-sequence key used for boundary-respecting lookup."""
    return tuple(t.surface.lower() for t in tokenize(name))


@dataclass
class ConceptEntry:
    """One ontology concept: id, semantic type, preferred name, synonyms."""

    concept_id: str
    semantic_type: str
    preferred_name: str
    synonyms: list[str] = field(default_factory=list)

    def all_names(self) -> list[str]:
        return [self.preferred_name] + list(self.synonyms)


class Lexicon:
    """Searchable collection of concepts, indexed by token sequence."""

    def __init__(self, entries):
        self.entries: list[ConceptEntry] = list(entries)
        self._index: dict[tuple[str, ...], ConceptEntry] = {}
        # (canonical name, owning entry) pairs after first-wins dedup,
        # consumed by the fuzzy matcher.
        self.names: list[tuple[str, ConceptEntry]] = []
        self.max_phrase = 0
        for entry in self.entries:
            if not entry.preferred_name.strip():
                raise ValueError(f"concept {entry.concept_id} has an empty preferred name")
            for name in entry.all_names():
                key = _name_key(name)
                if not key:
                    continue
                if key in self._index:
                    if self._index[key] is not entry:
                        logger.warning(
                            "duplicate lexicon name %r: keeping concept %s, ignoring %s",
                            canonical(name),
                            self._index[key].concept_id,
                            entry.concept_id,
                        )
                    continue
                self._index[key] = entry
                self.names.append((canonical(name), entry))
                self.max_phrase = max(self.max_phrase, len(key))

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, name: str) -> ConceptEntry | None:
        return self._index.get(_name_key(name))


def load_lexicon(path) -> Lexicon:
    """Read the lexicon TSV: concept_id, semantic_type, preferred_name,
    pipe-separated synonyms. '#' comment lines and blank lines skipped;
    duplicate names resolve to the first row with a warning."""
    path = Path(path)
    entries: list[ConceptEntry] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise DataFormatError(
                    f"expected 3 or 4 tab-separated fields, got {len(parts)}",
                    path=str(path),
                    line=lineno,
                )
            concept_id, semantic_type, preferred = (p.strip() for p in parts[:3])
            if not concept_id or not semantic_type or not preferred:
                raise DataFormatError("empty required field", path=str(path), line=lineno)
            synonyms = []
            if len(parts) == 4 and parts[3].strip():
                synonyms = [s.strip() for s in parts[3].split("|") if s.strip()]
            entries.append(
                ConceptEntry(
                    concept_id=concept_id,
                    semantic_type=semantic_type,
                    preferred_name=preferred,
                    synonyms=synonyms,
                )
            )
    return Lexicon(entries)


def match_entities(criterion: Criterion, lex: Lexicon) -> list[EntityMention]:
    """Scan one criterion for lexicon names.

    Candidates are every token span whose lowercased surfaces equal a
    stored name; overlaps resolve longest-span-first, then leftmost. Each
    match is typed with the concept's semantic type at confidence 1.0.
    """
    surfaces = [t.surface.lower() for t in criterion.tokens]
    n = len(surfaces)
    candidates: list[tuple[int, int, ConceptEntry]] = []
    for first in range(n):
        limit = min(lex.max_phrase, n - first)
        for length in range(1, limit + 1):
            entry = lex._index.get(tuple(surfaces[first : first + length]))
            if entry is not None:
                candidates.append((first, first + length - 1, entry))
    candidates.sort(key=lambda c: (-(c[1] - c[0]), c[0]))
    taken = [False] * n
    chosen: list[tuple[int, int, ConceptEntry]] = []
    for first, last, entry in candidates:
        if not any(taken[first : last + 1]):
            chosen.append((first, last, entry))
            for i in range(first, last + 1):
                taken[i] = True
    chosen.sort(key=lambda c: c[0])
    return [
        EntityMention(
            criterion_ref=criterion.ref,
            entity_type=entry.semantic_type,
            first=first,
            last=last,
            surface=criterion.text[criterion.tokens[first].start : criterion.tokens[last].end],
            confidence=1.0,
        )
        for first, last, entry in chosen
    ]
