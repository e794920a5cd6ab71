"""Entity normalization into canonical design variables.

Three-step pipeline per term: (1) fuzzy-link to a lexicon concept by
normalized edit similarity, (2) otherwise apply the highest-priority
rewrite rule, (3) otherwise pass the canonicalized term through. The
pipeline is idempotent on its own output.
"""

import json
from dataclasses import dataclass
from pathlib import Path

from .corpus import EntityMention
from .errors import DataFormatError
from .lexicon import ConceptEntry, Lexicon, canonical

DEFAULT_FUZZY_THRESHOLD = 0.85

SOURCE_LEXICON = "lexicon_link"
SOURCE_RULE = "rule"
SOURCE_PASSTHROUGH = "passthrough"


@dataclass(frozen=True)
class NormalizedVariable:
    """Canonical design-variable string with its type and provenance."""

    canonical: str
    variable_type: str
    source: str
    matched_concept_id: str | None = None

    def __post_init__(self):
        if not self.canonical:
            raise ValueError("canonical form must be non-empty")
        if self.source == SOURCE_LEXICON and not self.matched_concept_id:
            raise ValueError("lexicon-linked variables need a concept id")


@dataclass(frozen=True)
class RewriteRule:
    """A whole-term rewrite: pattern alternatives -> canonical replacement.

    The pattern is one or more canonical literal phrases separated by '|';
    a term matches when its canonical form equals any alternative. Larger
    priority wins; file order breaks ties.
    """

    pattern: str
    replacement: str
    priority: int = 0

    def alternatives(self) -> list[str]:
        return [canonical(alt) for alt in self.pattern.split("|") if alt.strip()]

    def matches(self, canonical_term: str) -> bool:
        return canonical_term in self.alternatives()


def levenshtein(a: str, b: str) -> int:
    """Classic edit distance (insert/delete/substitute, unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def edit_similarity(a: str, b: str) -> float:
    """1 - editdistance/max(len) on canonical forms; 1.0 iff forms are equal."""
    ca, cb = canonical(a), canonical(b)
    if not ca and not cb:
        return 1.0
    longest = max(len(ca), len(cb))
    return 1.0 - levenshtein(ca, cb) / longest


def fuzzy_match(
    term: str, lex: Lexicon, threshold: float = DEFAULT_FUZZY_THRESHOLD
) -> ConceptEntry | None:
    """Best-similarity concept for the term, or None below the threshold.

    Similarity ties break toward the shorter stored name, then
    lexicographically, so results never depend on lexicon row order.
    """
    if not term.strip():
        raise ValueError("cannot match an empty term")
    best: tuple[float, int, str] | None = None
    best_entry: ConceptEntry | None = None
    for name, entry in lex.names:
        sim = edit_similarity(term, name)
        key = (-sim, len(name), name)
        if best is None or key < best:
            best = key
            best_entry = entry
    if best is not None and -best[0] >= threshold:
        return best_entry
    return None


def load_rules(path) -> list[RewriteRule]:
    """Read the rules TSV: priority, pattern, replacement. '#' comments and
    blank lines skipped. Returned in application order (priority desc,
    then file order)."""
    path = Path(path)
    rules: list[RewriteRule] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(
                    f"expected 3 tab-separated fields, got {len(parts)}",
                    path=str(path),
                    line=lineno,
                )
            try:
                priority = int(parts[0])
            except ValueError as exc:
                raise DataFormatError(
                    f"priority must be an integer, got {parts[0]!r}", path=str(path), line=lineno
                ) from exc
            pattern, replacement = parts[1].strip(), canonical(parts[2])
            if not pattern or not replacement:
                raise DataFormatError("empty pattern or replacement", path=str(path), line=lineno)
            rules.append(RewriteRule(pattern=pattern, replacement=replacement, priority=priority))
    order = sorted(range(len(rules)), key=lambda i: (-rules[i].priority, i))
    return [rules[i] for i in order]


def apply_rules(canonical_term: str, rules) -> RewriteRule | None:
    """First matching rule in application order, or None."""
    for rule in rules:
        if rule.matches(canonical_term):
            return rule
    return None


def normalize_term(
    term: str,
    variable_type: str,
    lex: Lexicon,
    rules,
    threshold: float = DEFAULT_FUZZY_THRESHOLD,
) -> NormalizedVariable:
    """Run the three-step normalization pipeline on one surface term."""
    if not term.strip():
        raise ValueError("cannot normalize an empty term")
    entry = fuzzy_match(term, lex, threshold)
    if entry is not None:
        return NormalizedVariable(
            canonical=canonical(entry.preferred_name),
            variable_type=variable_type,
            source=SOURCE_LEXICON,
            matched_concept_id=entry.concept_id,
        )
    term_c = canonical(term)
    rule = apply_rules(term_c, rules)
    if rule is not None:
        return NormalizedVariable(
            canonical=rule.replacement, variable_type=variable_type, source=SOURCE_RULE
        )
    return NormalizedVariable(
        canonical=term_c, variable_type=variable_type, source=SOURCE_PASSTHROUGH
    )


def validate_rules(rules, lex: Lexicon, threshold: float = DEFAULT_FUZZY_THRESHOLD) -> None:
    """Check that every replacement is a normalization fixed point.

    A replacement that fuzzy-links to a different concept or triggers a
    different rule would make normalize_term non-idempotent; this rejects
    such rule files up front.
    """
    for rule in rules:
        out = normalize_term(rule.replacement, "X", lex, rules, threshold)
        if out.canonical != rule.replacement:
            raise ValueError(
                f"rule replacement {rule.replacement!r} is not a fixed point "
                f"(normalizes to {out.canonical!r})"
            )


def normalize_mentions(
    mentions,
    lex: Lexicon,
    rules,
    threshold: float = DEFAULT_FUZZY_THRESHOLD,
) -> list[tuple[EntityMention, NormalizedVariable]]:
    """Normalize a mention stream, keeping each mention for provenance."""
    return [
        (m, normalize_term(m.surface, m.entity_type, lex, rules, threshold)) for m in mentions
    ]


# --- variables JSONL ---------------------------------------------------------


def write_variables_jsonl(mentions_and_variables, path) -> None:
    """One line per normalized mention: trial/arm/index, surface, variable."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for mention, variable in mentions_and_variables:
            obj = {
                "trial_id": mention.criterion_ref[0],
                "arm": mention.criterion_ref[1],
                "index": mention.criterion_ref[2],
                "surface": mention.surface,
                "canonical": variable.canonical,
                "type": variable.variable_type,
                "source": variable.source,
                "concept_id": variable.matched_concept_id,
            }
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")


def read_variables_jsonl(path) -> list[tuple[str, NormalizedVariable]]:
    path = Path(path)
    out: list[tuple[str, NormalizedVariable]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                variable = NormalizedVariable(
                    canonical=obj["canonical"],
                    variable_type=obj["type"],
                    source=obj["source"],
                    matched_concept_id=obj.get("concept_id"),
                )
                out.append((obj["trial_id"], variable))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(
                    f"malformed variable record ({exc})", path=str(path), line=lineno
                ) from exc
    return out
