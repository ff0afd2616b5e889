"""Multi-pass evaluation metrics and comparison reports.

Implements the measurement side: unbiased pass@k from (passes, correct)
counts, per-category z-scored accuracy for heatmap-style comparison, token
footprint quartiles split by difficulty and correctness, and two-method
comparison tables rendered in the "value(+delta)" cell convention.
"""

from __future__ import annotations

import csv
import json
import math
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .errors import (
    CoverageError,
    DataIntegrityError,
    EmptyInputError,
    PreconditionError,
)
from .traces import Difficulty, ThinkingTrace


@dataclass(frozen=True)
class EvalRecord:
    question_id: str
    category: str
    difficulty: Difficulty
    pass_index: int
    correct: bool
    total_tokens: int
    thinking_tokens: int
    method_id: str

    def __post_init__(self):
        if self.pass_index < 0:
            raise DataIntegrityError(f"pass_index must be >= 0, got {self.pass_index}")
        if self.total_tokens < 0 or self.thinking_tokens < 0:
            raise DataIntegrityError("token counts must be >= 0")
        if self.thinking_tokens > self.total_tokens:
            raise DataIntegrityError(
                f"thinking_tokens ({self.thinking_tokens}) exceeds total_tokens "
                f"({self.total_tokens})"
            )


def eval_record_to_dict(record: EvalRecord) -> dict[str, Any]:
    return {
        "question_id": record.question_id,
        "category": record.category,
        "difficulty": record.difficulty.value,
        "pass_index": record.pass_index,
        "correct": record.correct,
        "total_tokens": record.total_tokens,
        "thinking_tokens": record.thinking_tokens,
        "method_id": record.method_id,
    }


def eval_record_from_dict(obj: Mapping[str, Any]) -> EvalRecord:
    try:
        return EvalRecord(
            question_id=str(obj["question_id"]),
            category=str(obj.get("category", "")),
            difficulty=Difficulty.parse(obj.get("difficulty")),
            pass_index=int(obj["pass_index"]),
            correct=bool(obj["correct"]),
            total_tokens=int(obj["total_tokens"]),
            thinking_tokens=int(obj["thinking_tokens"]),
            method_id=str(obj["method_id"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataIntegrityError(f"malformed eval record: {exc}") from exc


# --- pass@k ------------------------------------------------------------


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased probability that at least one of k drawn passes is correct.

    Equals 1 - C(n-c, k)/C(n, k), evaluated as a single exact-integer ratio
    so the float result is correctly rounded rather than accumulating error
    through intermediate divisions.
    """
    if not 0 <= c <= n:
        raise PreconditionError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise PreconditionError(f"need 1 <= k <= n, got k={k}, n={n}")
    total = math.comb(n, k)
    return (total - math.comb(n - c, k)) / total


def pass_at_k_curve(
    records: Sequence[EvalRecord],
    ks: Optional[Sequence[int]] = None,
) -> dict[int, float]:
    """Mean pass@k over questions, from per-question (passes, correct) counts."""
    if not records:
        raise EmptyInputError("no eval records")
    per_question: dict[str, tuple[int, int]] = {}
    for record in records:
        n, c = per_question.get(record.question_id, (0, 0))
        per_question[record.question_id] = (n + 1, c + (1 if record.correct else 0))
    max_k = min(n for n, _ in per_question.values())
    if ks is None:
        ks = range(1, max_k + 1)
    curve: dict[int, float] = {}
    for k in ks:
        if k > max_k:
            raise PreconditionError(
                f"k={k} exceeds the smallest per-question pass count {max_k}"
            )
        curve[k] = statistics.fmean(
            pass_at_k(n, c, k) for n, c in per_question.values()
        )
    return curve


# --- z-scores ----------------------------------------------------------


@dataclass(frozen=True)
class ZScoreMatrix:
    values: Mapping[str, Mapping[str, float]]  # category -> method -> z
    degenerate: tuple[str, ...]  # categories whose accuracies were constant


def category_zscores(matrix: Mapping[str, Mapping[str, float]]) -> ZScoreMatrix:
    """Standardize each category row across methods (population stddev).

    A constant row has no spread to standardize; it maps to all zeros and is
    listed as degenerate instead of erroring out.
    """
    if not matrix:
        raise EmptyInputError("no categories to standardize")
    values: dict[str, dict[str, float]] = {}
    degenerate: list[str] = []
    for category, row in matrix.items():
        if len(row) < 2:
            raise PreconditionError(
                f"category {category!r} has {len(row)} method(s); z-scores need >= 2"
            )
        accs = list(row.values())
        mean = statistics.fmean(accs)
        std = statistics.pstdev(accs)
        if std == 0.0:
            values[category] = {method: 0.0 for method in row}
            degenerate.append(category)
        else:
            values[category] = {m: (v - mean) / std for m, v in row.items()}
    return ZScoreMatrix(values=values, degenerate=tuple(degenerate))


def accuracy_matrix(records: Sequence[EvalRecord]) -> dict[str, dict[str, float]]:
    """Mean accuracy (percent) per category and method, for z-scoring."""
    sums: dict[tuple[str, str], tuple[int, int]] = {}
    for record in records:
        key = (record.category, record.method_id)
        n, c = sums.get(key, (0, 0))
        sums[key] = (n + 1, c + (1 if record.correct else 0))
    matrix: dict[str, dict[str, float]] = {}
    for (category, method), (n, c) in sums.items():
        matrix.setdefault(category, {})[method] = 100.0 * c / n
    return matrix


# --- token footprint -----------------------------------------------------


@dataclass(frozen=True)
class FiveNumber:
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


def _median(sorted_values: Sequence[float]) -> float:
    n = len(sorted_values)
    mid = n // 2
    if n % 2:
        return float(sorted_values[mid])
    return (sorted_values[mid - 1] + sorted_values[mid]) / 2.0


def five_number_summary(values: Sequence[float]) -> FiveNumber:
    """Min, quartiles, max with median-exclusive quartiles.

    For odd-length input the median itself belongs to neither half; a
    singleton collapses all five numbers to the one value.
    """
    if not values:
        raise EmptyInputError("cannot summarize an empty group")
    ordered = sorted(values)
    n = len(ordered)
    if n == 1:
        v = float(ordered[0])
        return FiveNumber(v, v, v, v, v)
    half = n // 2
    lower = ordered[:half]
    upper = ordered[half + 1:] if n % 2 else ordered[half:]
    return FiveNumber(
        minimum=float(ordered[0]),
        q1=_median(lower),
        median=_median(ordered),
        q3=_median(upper),
        maximum=float(ordered[-1]),
    )


FootprintKey = tuple[str, str, str]  # (method_id, difficulty, correctness)


def token_footprint(records: Sequence[EvalRecord]) -> dict[FootprintKey, FiveNumber]:
    """Five-number token summaries keyed by (method, difficulty, correctness)."""
    groups: dict[FootprintKey, list[float]] = {}
    for record in records:
        key = (record.method_id, record.difficulty.value,
               "correct" if record.correct else "wrong")
        groups.setdefault(key, []).append(float(record.total_tokens))
    return {key: five_number_summary(vals) for key, vals in sorted(groups.items())}


def write_footprint_csv(
    summaries: Mapping[FootprintKey, FiveNumber],
    path: str | Path,
    config_hash: Optional[str] = None,
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["method", "difficulty", "correctness",
                         "min", "q1", "median", "q3", "max"])
        for (method, difficulty, correctness), s in summaries.items():
            writer.writerow([method, difficulty, correctness,
                             s.minimum, s.q1, s.median, s.q3, s.maximum])


# --- comparison report --------------------------------------------------


@dataclass(frozen=True)
class ComparisonCell:
    pass1: float
    pct_tokens: float
    delta_pass1: float
    delta_tokens: float


def render_cell(value: float, delta: float) -> str:
    """The compact "value(+delta)" cell convention, one decimal each."""
    return f"{value:.1f}({delta:+.1f})"


@dataclass(frozen=True)
class ComparisonReport:
    rows: Mapping[str, Mapping[str, ComparisonCell]]  # row -> method -> cell
    methods: tuple[str, str]  # (original label, ours label)

    def to_json_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"methods": list(self.methods), "rows": {}}
        for row, cells in self.rows.items():
            out["rows"][row] = {
                method: {
                    "pass1": cell.pass1,
                    "pct_tokens": cell.pct_tokens,
                    "delta_pass1": cell.delta_pass1,
                    "delta_tokens": cell.delta_tokens,
                    "pass1_cell": render_cell(cell.pass1, cell.delta_pass1),
                    "tokens_cell": render_cell(cell.pct_tokens, cell.delta_tokens),
                }
                for method, cell in cells.items()
            }
        return out

    def to_csv(self, path: str | Path, config_hash: Optional[str] = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if config_hash:
                fh.write(f"# config_hash={config_hash}\n")
            writer = csv.writer(fh)
            writer.writerow(["row", "method", "pass1", "pct_tokens",
                             "delta_pass1", "delta_tokens"])
            for row, cells in self.rows.items():
                for method, cell in cells.items():
                    writer.writerow([row, method, cell.pass1, cell.pct_tokens,
                                     cell.delta_pass1, cell.delta_tokens])

    def to_text(self) -> str:
        header = ["", *self.methods]
        lines = [(row, *(render_cell(cells[m].pass1, cells[m].delta_pass1)
                         + " / "
                         + render_cell(cells[m].pct_tokens, cells[m].delta_tokens)
                         for m in self.methods))
                 for row, cells in self.rows.items()]
        widths = [max(len(str(r[i])) for r in [header, *lines])
                  for i in range(len(header))]
        rendered = []
        for entry in [header, *lines]:
            rendered.append("  ".join(str(v).ljust(w) for v, w in zip(entry, widths)))
        return "\n".join(rendered)


def _pass1(records: Sequence[EvalRecord], first_pass_only: bool) -> float:
    per_question: dict[str, list[bool]] = {}
    for record in records:
        if first_pass_only and record.pass_index != 0:
            continue
        per_question.setdefault(record.question_id, []).append(record.correct)
    if not per_question:
        raise EmptyInputError("no records left after pass filtering")
    question_acc = [statistics.fmean(map(float, flags))
                    for flags in per_question.values()]
    return 100.0 * statistics.fmean(question_acc)


def comparison_report(
    ours: Sequence[EvalRecord],
    original: Sequence[EvalRecord],
    categories: Optional[Sequence[str]] = None,
    first_pass_only: bool = False,
    method_labels: tuple[str, str] = ("original", "ours"),
) -> ComparisonReport:
    """Per-category and overall Pass@1 / token-percentage comparison.

    Pass@1 defaults to mean per-question accuracy over all passes (x100); the
    first-pass switch restricts it to pass_index 0. Token percentage is the
    method's total token spend relative to the original method's.
    """
    if not ours or not original:
        raise EmptyInputError("both record sets must be non-empty")
    ours_ids = {r.question_id for r in ours}
    orig_ids = {r.question_id for r in original}
    if ours_ids != orig_ids:
        raise CoverageError(
            "methods cover different question ids",
            missing_ours=tuple(sorted(orig_ids - ours_ids)),
            missing_original=tuple(sorted(ours_ids - orig_ids)),
        )

    if categories is None:
        categories = sorted({r.category for r in [*ours, *original] if r.category})
    row_filters: list[tuple[str, Any]] = [
        (category, lambda r, c=category: r.category == c) for category in categories
    ]
    row_filters.append(("overall", lambda r: True))

    orig_label, ours_label = method_labels
    rows: dict[str, dict[str, ComparisonCell]] = {}
    for row_name, keep in row_filters:
        ours_rows = [r for r in ours if keep(r)]
        orig_rows = [r for r in original if keep(r)]
        if not ours_rows or not orig_rows:
            continue
        base_pass1 = _pass1(orig_rows, first_pass_only)
        ours_pass1 = _pass1(ours_rows, first_pass_only)
        base_tokens = sum(r.total_tokens for r in orig_rows)
        ours_tokens = sum(r.total_tokens for r in ours_rows)
        if base_tokens == 0:
            raise PreconditionError(
                f"original method spent zero tokens in row {row_name!r}"
            )
        pct = 100.0 * ours_tokens / base_tokens
        rows[row_name] = {
            orig_label: ComparisonCell(pass1=base_pass1, pct_tokens=100.0,
                                       delta_pass1=0.0, delta_tokens=0.0),
            ours_label: ComparisonCell(pass1=ours_pass1, pct_tokens=pct,
                                       delta_pass1=ours_pass1 - base_pass1,
                                       delta_tokens=pct - 100.0),
        }
    return ComparisonReport(rows=rows, methods=method_labels)


# --- answer judging ---------------------------------------------------------

DEFAULT_ANSWER_PATTERNS = (
    r"\\boxed\{([^{}]*)\}",
    r"(?:final answer|the answer is)[:\s]*([^\n.]+)",
)


def normalize_answer(text: str) -> str:
    cleaned = re.sub(r"\s+", " ", text).strip().strip(".").strip()
    return cleaned.casefold()


def extract_answer(text: str, patterns: Sequence[str] = DEFAULT_ANSWER_PATTERNS) -> str:
    """Pull the final answer out of generated text; last match wins."""
    for pattern in patterns:
        matches = re.findall(pattern, text, flags=re.IGNORECASE)
        if matches:
            return normalize_answer(matches[-1])
    return normalize_answer(text.rsplit("\n", 1)[-1])


def judge_trace(
    trace: ThinkingTrace,
    gold_answer: str,
    patterns: Sequence[str] = DEFAULT_ANSWER_PATTERNS,
) -> bool:
    answer_region = trace.answer_text() or trace.text()
    return extract_answer(answer_region, patterns) == normalize_answer(gold_answer)
