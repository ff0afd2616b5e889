"""Per-step perplexity probe and its aggregations.

Each thinking-trace token is scored under three visual contexts (real image,
matched noise image, no image) and converted to perplexities

    ppl_c(s) = exp(-logprob_c(s))

from which two contrasts are formed:

    delta_content(s)  = ppl_real(s)  - ppl_noise(s)
    delta_presence(s) = ppl_noise(s) - ppl_absent(s)

A strongly negative delta_content means the actual image content makes the
token much easier; a large |delta_presence| means the mere presence of visual
tokens moves the prediction regardless of what they depict.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .backend.types import ScoreResponse
from .errors import (
    DataIntegrityError,
    EmptyInputError,
    InsufficientDataError,
    PreconditionError,
)
from .traces import ThinkingTrace

MIN_RECORDS_FOR_QUANTILES = 100
DEFAULT_BINS = 50
DEFAULT_QUANTILES = (0.90, 0.50, 0.10)


@dataclass(frozen=True)
class ProbeRecord:
    """One step's perplexities and contrasts, plus grouping metadata."""

    question_id: str
    pass_index: int
    step: int
    ppl_real: float
    ppl_noise: float
    ppl_absent: float
    delta_content: float
    delta_presence: float
    norm_pos: float
    correct: Optional[bool] = None
    model_id: str = ""

    def __post_init__(self):
        if self.step < 1:
            raise DataIntegrityError(f"step must be >= 1, got {self.step}")
        for name in ("ppl_real", "ppl_noise", "ppl_absent"):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise DataIntegrityError(f"{name} must be finite and > 0, got {value!r}")
        if not 0.0 <= self.norm_pos <= 100.0:
            raise DataIntegrityError(f"norm_pos out of [0, 100]: {self.norm_pos!r}")


def record_to_dict(record: ProbeRecord) -> dict[str, Any]:
    out = {
        "question_id": record.question_id,
        "pass_index": record.pass_index,
        "step": record.step,
        "ppl_real": record.ppl_real,
        "ppl_noise": record.ppl_noise,
        "ppl_absent": record.ppl_absent,
        "delta_content": record.delta_content,
        "delta_presence": record.delta_presence,
        "norm_pos": record.norm_pos,
        "model_id": record.model_id,
    }
    if record.correct is not None:
        out["correct"] = record.correct
    return out


def record_from_dict(obj: Mapping[str, Any]) -> ProbeRecord:
    try:
        correct = obj.get("correct")
        return ProbeRecord(
            question_id=str(obj["question_id"]),
            pass_index=int(obj["pass_index"]),
            step=int(obj["step"]),
            ppl_real=float(obj["ppl_real"]),
            ppl_noise=float(obj["ppl_noise"]),
            ppl_absent=float(obj["ppl_absent"]),
            delta_content=float(obj["delta_content"]),
            delta_presence=float(obj["delta_presence"]),
            norm_pos=float(obj["norm_pos"]),
            correct=None if correct is None else bool(correct),
            model_id=str(obj.get("model_id", "")),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataIntegrityError(f"malformed probe record: {exc}") from exc


def _check_alignment(trace: ThinkingTrace, response: ScoreResponse, label: str) -> None:
    if len(response.token_logprobs) != len(trace.tokens):
        raise PreconditionError(
            f"{label} score response has {len(response.token_logprobs)} tokens, "
            f"trace {trace.question_id}/{trace.pass_index} has {len(trace.tokens)}"
        )
    for i, ((text, _), token) in enumerate(zip(response.token_logprobs, trace.tokens)):
        if text != token.text:
            raise PreconditionError(
                f"{label} score response re-segmented the trace at index {i}: "
                f"{text!r} != {token.text!r}"
            )


def step_perplexities(
    trace: ThinkingTrace,
    scores_real: ScoreResponse,
    scores_noise: ScoreResponse,
    scores_absent: ScoreResponse,
    total_steps: Optional[int] = None,
) -> list[ProbeRecord]:
    """Turn three aligned score responses into one record per step.

    total_steps overrides the trace length used for norm_pos when the scored
    trace is a truncated prefix of a longer one, so positions stay honest.
    """
    _check_alignment(trace, scores_real, "real")
    _check_alignment(trace, scores_noise, "noise")
    _check_alignment(trace, scores_absent, "absent")

    total = total_steps if total_steps is not None else len(trace.tokens)
    if total < len(trace.tokens):
        raise PreconditionError(
            f"total_steps ({total}) is less than the scored length "
            f"({len(trace.tokens)})"
        )
    records = []
    for i in range(len(trace.tokens)):
        step = i + 1
        ppl_real = math.exp(-scores_real.token_logprobs[i][1])
        ppl_noise = math.exp(-scores_noise.token_logprobs[i][1])
        ppl_absent = math.exp(-scores_absent.token_logprobs[i][1])
        records.append(ProbeRecord(
            question_id=trace.question_id,
            pass_index=trace.pass_index,
            step=step,
            ppl_real=ppl_real,
            ppl_noise=ppl_noise,
            ppl_absent=ppl_absent,
            delta_content=ppl_real - ppl_noise,
            delta_presence=ppl_noise - ppl_absent,
            norm_pos=100.0 * step / total,
            correct=trace.correct,
            model_id=trace.model_id,
        ))
    return records


# --- aggregation -----------------------------------------------------------

GROUP_FIELDS = ("correctness", "model_id")


@dataclass(frozen=True)
class CurveRow:
    group: str
    bin_lo: float
    bin_hi: float
    series: str
    mean: Optional[float]
    stderr: Optional[float]
    n: int


def _group_label(record: ProbeRecord, group_by: Sequence[str]) -> str:
    parts = []
    for field_name in group_by:
        if field_name == "correctness":
            if record.correct is None:
                parts.append("unlabeled")
            else:
                parts.append("correct" if record.correct else "wrong")
        elif field_name == "model_id":
            parts.append(record.model_id or "unknown-model")
        else:
            raise PreconditionError(
                f"unknown group field {field_name!r}; expected one of {GROUP_FIELDS}"
            )
    return "/".join(parts) if parts else "all"


def _mean_stderr(values: list[float]) -> tuple[Optional[float], Optional[float]]:
    n = len(values)
    if n == 0:
        return None, None
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if n < 2:
        return mean, None
    return mean, float(arr.std(ddof=1) / math.sqrt(n))


def aggregate_delta_curves(
    records: Sequence[ProbeRecord],
    group_by: Sequence[str] = GROUP_FIELDS,
    bins: int = DEFAULT_BINS,
) -> list[CurveRow]:
    """Bin both contrast series over normalized position, per group.

    Returns rows for the normalized 0-100% curves (series "content" and
    "presence", empty bins emitted with n=0 and null mean) followed by the
    raw-step variant (series "content_raw" / "presence_raw", one row per
    step index actually observed).
    """
    if not records:
        raise EmptyInputError("no probe records to aggregate")
    if bins < 2:
        raise PreconditionError(f"bins must be >= 2, got {bins}")

    width = 100.0 / bins
    grouped: dict[str, list[ProbeRecord]] = {}
    for record in records:
        grouped.setdefault(_group_label(record, group_by), []).append(record)

    rows: list[CurveRow] = []
    for group in sorted(grouped):
        members = grouped[group]
        binned: dict[int, list[ProbeRecord]] = {i: [] for i in range(bins)}
        for record in members:
            index = min(int(record.norm_pos / width), bins - 1)
            binned[index].append(record)
        for series, attr in (("content", "delta_content"), ("presence", "delta_presence")):
            for i in range(bins):
                values = [getattr(r, attr) for r in binned[i]]
                mean, stderr = _mean_stderr(values)
                rows.append(CurveRow(
                    group=group, bin_lo=i * width, bin_hi=(i + 1) * width,
                    series=series, mean=mean, stderr=stderr, n=len(values),
                ))
        by_step: dict[int, list[ProbeRecord]] = {}
        for record in members:
            by_step.setdefault(record.step, []).append(record)
        for series, attr in (("content_raw", "delta_content"),
                             ("presence_raw", "delta_presence")):
            for step in sorted(by_step):
                values = [getattr(r, attr) for r in by_step[step]]
                mean, stderr = _mean_stderr(values)
                rows.append(CurveRow(
                    group=group, bin_lo=float(step), bin_hi=float(step),
                    series=series, mean=mean, stderr=stderr, n=len(values),
                ))
    return rows


def write_curves_csv(rows: Iterable[CurveRow], path: str | Path,
                     config_hash: Optional[str] = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["group", "bin_lo", "bin_hi", "series", "mean", "stderr", "n"])
        for row in rows:
            writer.writerow([
                row.group,
                f"{row.bin_lo:.6g}",
                f"{row.bin_hi:.6g}",
                row.series,
                "" if row.mean is None else repr(row.mean),
                "" if row.stderr is None else repr(row.stderr),
                row.n,
            ])


# --- step flagging ---------------------------------------------------------


class StepFlag(enum.Enum):
    PRESENCE_SENSITIVE = "presence_sensitive"
    CONTENT_GROUNDED = "content_grounded"
    NEUTRAL = "neutral"


@dataclass(frozen=True)
class FlagThresholds:
    """Resolved absolute thresholds for the flag rule.

    q_p: minimum |delta_presence| to count as presence-driven.
    q_c: maximum |delta_content| still considered content-agnostic.
    q_g: delta_content at or below this (negative) value is content-grounded.
    """

    q_p: float
    q_c: float
    q_g: float


def derive_thresholds(
    records: Sequence[ProbeRecord],
    quantiles: tuple[float, float, float] = DEFAULT_QUANTILES,
) -> FlagThresholds:
    if len(records) < MIN_RECORDS_FOR_QUANTILES:
        raise InsufficientDataError(
            f"{len(records)} records is too few to estimate flag thresholds "
            f"(need >= {MIN_RECORDS_FOR_QUANTILES}); pass explicit FlagThresholds"
        )
    abs_presence = np.abs([r.delta_presence for r in records])
    abs_content = np.abs([r.delta_content for r in records])
    content = np.asarray([r.delta_content for r in records])
    return FlagThresholds(
        q_p=float(np.quantile(abs_presence, quantiles[0])),
        q_c=float(np.quantile(abs_content, quantiles[1])),
        q_g=float(np.quantile(content, quantiles[2])),
    )


@dataclass(frozen=True)
class FlagIndex:
    """Flags keyed by (question_id, pass_index, step), with the thresholds used."""

    flags: Mapping[tuple[str, int, int], StepFlag]
    thresholds: FlagThresholds

    def get(self, question_id: str, pass_index: int, step: int) -> StepFlag:
        return self.flags.get((question_id, pass_index, step), StepFlag.NEUTRAL)

    def count(self, flag: StepFlag) -> int:
        return sum(1 for f in self.flags.values() if f is flag)

    def rate(self, flag: StepFlag) -> float:
        if not self.flags:
            return 0.0
        return self.count(flag) / len(self.flags)


def classify_step(record: ProbeRecord, thresholds: FlagThresholds) -> StepFlag:
    # Degenerate guards keep all-zero contrast sets neutral: a threshold of
    # zero magnitude (or a non-negative grounding cutoff) flags nothing.
    if (thresholds.q_p > 0.0
            and abs(record.delta_presence) >= thresholds.q_p
            and abs(record.delta_content) <= thresholds.q_c):
        return StepFlag.PRESENCE_SENSITIVE
    if thresholds.q_g < 0.0 and record.delta_content <= thresholds.q_g:
        return StepFlag.CONTENT_GROUNDED
    return StepFlag.NEUTRAL


def flag_steps(
    records: Sequence[ProbeRecord],
    thresholds: Optional[FlagThresholds] = None,
    quantiles: tuple[float, float, float] = DEFAULT_QUANTILES,
) -> FlagIndex:
    """Label every probed step; PresenceSensitive wins when both rules match."""
    if not records:
        raise EmptyInputError("no probe records to flag")
    if thresholds is None:
        thresholds = derive_thresholds(records, quantiles)
    flags = {
        (r.question_id, r.pass_index, r.step): classify_step(r, thresholds)
        for r in records
    }
    return FlagIndex(flags=flags, thresholds=thresholds)
