"""Deterministic scripted backend for tests and dry pipelines.

The mock is driven entirely by a script: per question it holds the token
sequence a generation would emit and logprob tables for teacher-forced
scoring under each visual context. Responses are a pure function of
(seed, request) — never of call order — and the instance is safe to share
across threads.

Generation supports continuation: the request prefix is matched greedily
against the scripted tokens (elements that do not match, such as injected
lookback templates, are skipped) and emission resumes after the last matched
script token. This mirrors a real server re-tokenizing an extended prefix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from ..errors import ProtocolViolationError
from .types import (
    Backend,
    CallLog,
    CallRecord,
    GenerateRequest,
    ScoreRequest,
    ScoreResponse,
    StreamChunk,
    TokenStream,
    validate_alignment,
)

SCRIPT_FORMAT = "lookback/mock-script@1"

_KINDS = ("real", "noise", "absent")


@dataclass(frozen=True)
class QuestionScript:
    """Scripted behavior for one question."""

    tokens: tuple[str, ...] = ()
    tokens_by_seed: Mapping[int, tuple[str, ...]] = field(default_factory=dict)
    gen_logprobs: tuple[float, ...] = ()
    score_by_token: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    score_by_position: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    score_default: Mapping[str, float] = field(default_factory=dict)

    def tokens_for_seed(self, seed: int) -> tuple[str, ...]:
        return tuple(self.tokens_by_seed.get(seed, self.tokens))


@dataclass(frozen=True)
class MockScript:
    questions: Mapping[str, QuestionScript]
    default_score_logprob: float = -1.0
    default_gen_logprob: float = -0.5

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "MockScript":
        questions: dict[str, QuestionScript] = {}
        for question, entry in obj.get("questions", {}).items():
            by_seed = {int(k): tuple(v) for k, v in entry.get("tokens_by_seed", {}).items()}
            by_pos = {k: tuple(float(x) for x in v)
                      for k, v in entry.get("score_by_position", {}).items()}
            by_tok = {k: {t: float(x) for t, x in v.items()}
                      for k, v in entry.get("score_by_token", {}).items()}
            questions[question] = QuestionScript(
                tokens=tuple(entry.get("tokens", [])),
                tokens_by_seed=by_seed,
                gen_logprobs=tuple(float(x) for x in entry.get("gen_logprobs", [])),
                score_by_token=by_tok,
                score_by_position=by_pos,
                score_default={k: float(v) for k, v in entry.get("score_default", {}).items()},
            )
        return cls(
            questions=questions,
            default_score_logprob=float(obj.get("default_score_logprob", -1.0)),
            default_gen_logprob=float(obj.get("default_gen_logprob", -0.5)),
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"format": SCRIPT_FORMAT, "questions": {}}
        out["default_score_logprob"] = self.default_score_logprob
        out["default_gen_logprob"] = self.default_gen_logprob
        for question, qscript in self.questions.items():
            entry: dict[str, Any] = {"tokens": list(qscript.tokens)}
            if qscript.tokens_by_seed:
                entry["tokens_by_seed"] = {str(k): list(v) for k, v in qscript.tokens_by_seed.items()}
            if qscript.gen_logprobs:
                entry["gen_logprobs"] = list(qscript.gen_logprobs)
            if qscript.score_by_token:
                entry["score_by_token"] = {k: dict(v) for k, v in qscript.score_by_token.items()}
            if qscript.score_by_position:
                entry["score_by_position"] = {k: list(v) for k, v in qscript.score_by_position.items()}
            if qscript.score_default:
                entry["score_default"] = dict(qscript.score_default)
            out["questions"][question] = entry
        return out

    @classmethod
    def load(cls, path: str | Path) -> "MockScript":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=1, sort_keys=True)


class MockBackend:
    """Scripted :class:`Backend` implementation."""

    def __init__(self, script: MockScript):
        self.script = script
        self.calls = CallLog()

    def _question_script(self, question: str) -> QuestionScript:
        entry = self.script.questions.get(question)
        if entry is None:
            raise ProtocolViolationError(f"question not scripted: {question!r}")
        return entry

    def _score_one(self, entry: QuestionScript, kind: str, text: str, position: int) -> float:
        by_token = entry.score_by_token.get(kind)
        if by_token is not None and text in by_token:
            return by_token[text]
        by_pos = entry.score_by_position.get(kind)
        if by_pos is not None and position < len(by_pos):
            return by_pos[position]
        if kind in entry.score_default:
            return entry.score_default[kind]
        return self.script.default_score_logprob

    def score(self, request: ScoreRequest) -> ScoreResponse:
        entry = self._question_script(request.question_text)
        kind = request.context.kind.value
        self.calls.add(CallRecord(op="score", question_text=request.question_text,
                                  context_kind=kind, n_tokens=len(request.forced_continuation)))
        pairs = tuple(
            (text, self._score_one(entry, kind, text, i))
            for i, text in enumerate(request.forced_continuation)
        )
        response = ScoreResponse(token_logprobs=pairs, model_echo=request.model_id)
        validate_alignment(request, response)
        return response

    def generate_stream(self, request: GenerateRequest) -> TokenStream:
        entry = self._question_script(request.question_text)
        seed = request.sampling.seed
        tokens = entry.tokens_for_seed(seed)
        self.calls.add(CallRecord(op="generate", question_text=request.question_text,
                                  context_kind=request.context.kind.value,
                                  n_tokens=len(request.prefix), seed=seed))

        # Greedy continuation: count script tokens already present in the
        # prefix, in order, skipping injected text that is not in the script.
        matched = 0
        for element in request.prefix:
            if matched < len(tokens) and element == tokens[matched]:
                matched += 1

        budget = request.sampling.max_new_tokens
        remaining = tokens[matched:]
        default_lp = self.script.default_gen_logprob

        def emit():
            emitted = 0
            for offset, text in enumerate(remaining):
                if emitted >= budget:
                    return True  # budget cutoff with script left over
                position = matched + offset
                lp = (entry.gen_logprobs[position]
                      if position < len(entry.gen_logprobs) else default_lp)
                emitted += 1
                yield StreamChunk(text=text, logprob=lp, index=emitted)
            return False

        return TokenStream(emit())


def load_mock_backend(script_path: str | Path) -> MockBackend:
    return MockBackend(MockScript.load(script_path))
