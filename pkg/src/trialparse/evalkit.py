"""Entity-level precision/recall/F1 and model-vs-model comparison.

Matching is exact: a predicted mention counts as a true positive only
when an unmatched gold mention shares its criterion reference, token
span, and entity type. No partial credit, no boundary slack.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import EntityMention
from .errors import DataFormatError

METRICS = ("precision", "recall", "f1")


def _prf(tp: int, predicted: int, gold: int) -> tuple[float, float, float]:
    precision = tp / predicted if predicted else 0.0
    recall = tp / gold if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class EvalReport:
    """Counts plus derived ratios, overall and per entity type."""

    true_positives: int
    predicted_count: int
    gold_count: int
    precision: float
    recall: float
    f1: float
    per_type: dict[str, "EvalReport"] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, tp: int, predicted: int, gold: int) -> "EvalReport":
        if not 0 <= tp <= min(predicted, gold) or predicted < 0 or gold < 0:
            raise ValueError(f"inconsistent counts tp={tp} predicted={predicted} gold={gold}")
        p, r, f1 = _prf(tp, predicted, gold)
        return cls(tp, predicted, gold, p, r, f1)

    def to_dict(self, include_types: bool = True) -> dict:
        out = {
            "true_positives": self.true_positives,
            "predicted": self.predicted_count,
            "gold": self.gold_count,
            "precision": round(self.precision, 6),
            "recall": round(self.recall, 6),
            "f1": round(self.f1, 6),
        }
        if include_types and self.per_type:
            out["per_type"] = {
                t: r.to_dict(include_types=False) for t, r in sorted(self.per_type.items())
            }
        return out


def _check_unique(mentions, label: str) -> dict[tuple, EntityMention]:
    table: dict[tuple, EntityMention] = {}
    for m in mentions:
        if m.key in table:
            raise ValueError(
                f"duplicate {label} mention {m.entity_type} at "
                f"{m.criterion_ref} tokens [{m.first}, {m.last}]"
            )
        table[m.key] = m
    return table


def entity_prf(predicted, gold) -> EvalReport:
    """Exact-match entity scores with a per-type breakdown.

    Each gold mention can satisfy at most one prediction; with exact key
    matching that reduces to set intersection. Duplicate identical
    mentions inside either input are malformed annotations and raise.
    """
    pred_table = _check_unique(predicted, "predicted")
    gold_table = _check_unique(gold, "gold")
    matched = set(pred_table) & set(gold_table)
    report = EvalReport.from_counts(len(matched), len(pred_table), len(gold_table))
    types = {m.entity_type for m in pred_table.values()} | {m.entity_type for m in gold_table.values()}
    for t in sorted(types):
        p_t = sum(1 for m in pred_table.values() if m.entity_type == t)
        g_t = sum(1 for m in gold_table.values() if m.entity_type == t)
        tp_t = sum(1 for key in matched if key[3] == t)
        report.per_type[t] = EvalReport.from_counts(tp_t, p_t, g_t)
    return report


@dataclass
class ModelComparison:
    """Per-metric deltas (a minus b) on 3-decimal rounded values."""

    deltas: dict[str, float]
    winners: dict[str, str]
    overall_winner: str
    ndigits: int

    def to_dict(self) -> dict:
        return {
            "deltas": self.deltas,
            "winners": self.winners,
            "overall_winner": self.overall_winner,
        }


def compare_models(report_a: EvalReport, report_b: EvalReport, ndigits: int = 3) -> ModelComparison:
    """Compare two reports computed on the same gold set.

    Metrics are rounded to `ndigits` before differencing, mirroring how
    reported tables are compared; the winner per metric is "a", "b", or
    "tie", and the overall winner follows F1.
    """
    if report_a.gold_count != report_b.gold_count:
        raise ValueError(
            f"reports use different gold sets ({report_a.gold_count} vs {report_b.gold_count} mentions)"
        )
    deltas: dict[str, float] = {}
    winners: dict[str, str] = {}
    for metric in METRICS:
        a = round(getattr(report_a, metric), ndigits)
        b = round(getattr(report_b, metric), ndigits)
        deltas[metric] = round(a - b, ndigits)
        winners[metric] = "a" if a > b else "b" if b > a else "tie"
    return ModelComparison(
        deltas=deltas, winners=winners, overall_winner=winners["f1"], ndigits=ndigits
    )


# --- mention JSONL -----------------------------------------------------------


def write_mentions_jsonl(mentions, path) -> None:
    """One mention per line with its criterion reference, span, and type."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for m in mentions:
            obj = {
                "trial_id": m.criterion_ref[0],
                "arm": m.criterion_ref[1],
                "index": m.criterion_ref[2],
                "first": m.first,
                "last": m.last,
                "type": m.entity_type,
                "surface": m.surface,
                "confidence": round(m.confidence, 6),
            }
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")


def read_mentions_jsonl(path) -> list[EntityMention]:
    path = Path(path)
    mentions: list[EntityMention] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                mentions.append(
                    EntityMention(
                        criterion_ref=(obj["trial_id"], obj["arm"], obj["index"]),
                        entity_type=obj["type"],
                        first=obj["first"],
                        last=obj["last"],
                        surface=obj.get("surface", ""),
                        confidence=obj.get("confidence", 1.0),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(
                    f"malformed mention record ({exc})", path=str(path), line=lineno
                ) from exc
    return mentions
