"""Thinking-trace data model and JSONL codecs.

A trace is the ordered token sequence one decode pass produced, with
per-token logprobs and a phase label splitting the reasoning segment from
the final-answer segment. Phase labels are monotone: once the answer phase
begins no later token is labeled thinking.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional

from .errors import DataIntegrityError


class Phase(enum.Enum):
    THINKING = "thinking"
    ANSWER = "answer"


class Difficulty(enum.Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"
    UNKNOWN = "unknown"

    @classmethod
    def parse(cls, value: Optional[str]) -> "Difficulty":
        if not value:
            return cls.UNKNOWN
        try:
            return cls(value.strip().lower())
        except ValueError:
            return cls.UNKNOWN


@dataclass(frozen=True)
class TraceToken:
    text: str
    logprob: float
    phase: Phase
    injected: bool = False  # forced template text, not sampled from the model

    def __post_init__(self):
        if not math.isfinite(self.logprob) or self.logprob > 0.0:
            raise DataIntegrityError(
                f"token logprob must be finite and <= 0, got {self.logprob!r}"
            )


@dataclass(frozen=True)
class ThinkingTrace:
    question_id: str
    pass_index: int
    tokens: tuple[TraceToken, ...]
    model_id: str
    category: str = ""
    difficulty: Difficulty = Difficulty.UNKNOWN
    correct: Optional[bool] = None

    def __post_init__(self):
        if self.pass_index < 0:
            raise DataIntegrityError(f"pass_index must be >= 0, got {self.pass_index}")
        if len(self.tokens) < 1:
            raise DataIntegrityError("trace must contain at least one token")
        seen_answer = False
        for i, token in enumerate(self.tokens):
            if token.phase is Phase.ANSWER:
                seen_answer = True
            elif seen_answer:
                raise DataIntegrityError(
                    f"phase labels not monotone: thinking token at index {i} "
                    "after answer phase began"
                )

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def key(self) -> tuple[str, int]:
        return (self.question_id, self.pass_index)

    @property
    def thinking_tokens(self) -> int:
        return sum(1 for t in self.tokens if t.phase is Phase.THINKING)

    @property
    def total_tokens(self) -> int:
        return len(self.tokens)

    def token_texts(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.tokens)

    def text(self) -> str:
        return "".join(t.text for t in self.tokens)

    def answer_text(self) -> str:
        return "".join(t.text for t in self.tokens if t.phase is Phase.ANSWER)


def token_to_dict(token: TraceToken) -> dict[str, Any]:
    out: dict[str, Any] = {"text": token.text, "logprob": token.logprob,
                           "phase": token.phase.value}
    if token.injected:
        out["injected"] = True
    return out


def token_from_dict(obj: Mapping[str, Any]) -> TraceToken:
    try:
        return TraceToken(
            text=str(obj["text"]),
            logprob=float(obj["logprob"]),
            phase=Phase(obj["phase"]),
            injected=bool(obj.get("injected", False)),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataIntegrityError(f"malformed trace token: {exc}") from exc


def trace_to_dict(trace: ThinkingTrace) -> dict[str, Any]:
    out: dict[str, Any] = {
        "question_id": trace.question_id,
        "pass_index": trace.pass_index,
        "model_id": trace.model_id,
        "category": trace.category,
        "difficulty": trace.difficulty.value,
        "tokens": [token_to_dict(t) for t in trace.tokens],
    }
    if trace.correct is not None:
        out["correct"] = trace.correct
    return out


def trace_from_dict(obj: Mapping[str, Any]) -> ThinkingTrace:
    """Parse a trace line, tolerating extra keys (injection/branch logs)."""
    try:
        tokens = tuple(token_from_dict(t) for t in obj["tokens"])
        correct = obj.get("correct")
        return ThinkingTrace(
            question_id=str(obj["question_id"]),
            pass_index=int(obj["pass_index"]),
            tokens=tokens,
            model_id=str(obj.get("model_id", "")),
            category=str(obj.get("category", "")),
            difficulty=Difficulty.parse(obj.get("difficulty")),
            correct=None if correct is None else bool(correct),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataIntegrityError(f"malformed trace record: {exc}") from exc
