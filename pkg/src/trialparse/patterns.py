"""Cross-trial aggregation of normalized variables into frequency tables.

Cells count distinct trials, never mentions: a variable repeated five
times in one trial still counts once. Rows survive the min_count filter
only when their distinct-trial total is strictly greater than the
threshold.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

from .corpus import TrialRecord
from .normalizer import NormalizedVariable

ROW_MODES = ("type", "variable")


@dataclass
class FrequencyTable:
    """Rows are variable types or canonical variables, columns conditions."""

    row_mode: str
    row_keys: list[str]
    columns: list[str]
    cells: list[list[int]]  # cells[r][c] aligned with row_keys x columns
    row_totals: list[int]  # distinct-trial count per row, all conditions
    min_count: int

    def cell(self, row_key: str, column: str) -> int:
        return self.cells[self.row_keys.index(row_key)][self.columns.index(column)]

    def write_csv(self, path) -> None:
        """Header = conditions; one row per key; stable ordering."""
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([self.row_mode] + self.columns)
            for key, row in zip(self.row_keys, self.cells):
                writer.writerow([key] + row)


def aggregate(
    variables,
    trials,
    row_mode: str = "type",
    min_count: int = 10,
) -> FrequencyTable:
    """Build the distinct-trial frequency table.

    variables: iterable of (trial_id, NormalizedVariable). Every trial_id
    must exist in trials. cell(r, c) counts trials labeled with condition
    c from which row key r was extracted; a row is kept only when its
    overall distinct-trial count exceeds min_count. Rows are ordered by
    descending total, then lexicographically; columns lexicographically.
    """
    if row_mode not in ROW_MODES:
        raise ValueError(f"row_mode must be one of {ROW_MODES}, got {row_mode!r}")
    trial_by_id: dict[str, TrialRecord] = {t.trial_id: t for t in trials}
    row_trials: dict[str, set[str]] = {}
    contributing: set[str] = set()
    for trial_id, variable in variables:
        if trial_id not in trial_by_id:
            raise ValueError(f"unknown trial_id {trial_id!r} in variables")
        key = variable.variable_type if row_mode == "type" else variable.canonical
        row_trials.setdefault(key, set()).add(trial_id)
        contributing.add(trial_id)

    columns = sorted({c for tid in contributing for c in trial_by_id[tid].conditions})
    kept = [(key, ids) for key, ids in row_trials.items() if len(ids) > min_count]
    kept.sort(key=lambda item: (-len(item[1]), item[0]))

    cells = []
    for _, ids in kept:
        cells.append(
            [
                sum(1 for tid in ids if column in trial_by_id[tid].conditions)
                for column in columns
            ]
        )
    return FrequencyTable(
        row_mode=row_mode,
        row_keys=[key for key, _ in kept],
        columns=columns,
        cells=cells,
        row_totals=[len(ids) for _, ids in kept],
        min_count=min_count,
    )


def top_variables(variables, entity_type: str | None = None, k: int = 10) -> list[tuple[str, int]]:
    """Most frequent canonical variables by distinct-trial count.

    Optionally restricted to one variable type; descending count with
    lexicographic tie-break; at most k rows.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts: dict[str, set[str]] = {}
    for trial_id, variable in variables:
        if entity_type is not None and variable.variable_type != entity_type:
            continue
        counts.setdefault(variable.canonical, set()).add(trial_id)
    ranked = sorted(counts.items(), key=lambda item: (-len(item[1]), item[0]))
    return [(name, len(ids)) for name, ids in ranked[:k]]
