"""Streaming decode controller: watch for pause phrases, inject lookbacks.

The controller never scores anything while decoding. It watches the word
suffix of the stream; when a mined pause phrase appears (and the session is
still in the thinking phase, outside the cooldown window, and under the
injection cap) it appends a lookback template as forced text and re-issues
generation from the extended prefix. All heavy computation happened offline
when the vocabulary was mined; the online path is plain suffix matching.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

from .backend.types import (
    Backend,
    GenerateRequest,
    SamplingParams,
    VisualContext,
)
from .branching import BranchingConfig, BranchLog, branch_phase
from .errors import (
    BackendError,
    ConfigError,
    DataIntegrityError,
    StreamInterruptedError,
)
from .miner import PhraseVocabulary
from .traces import Difficulty, Phase, ThinkingTrace, TraceToken, trace_to_dict
from .words import WordBuffer

DEFAULT_SUFFIX_LEN = 8
DEFAULT_COOLDOWN = 128
DEFAULT_MAX_INJECTIONS = 8
DEFAULT_ANSWER_MARKERS = ("Final Answer", "\\boxed{")
DEFAULT_THINK_CLOSE = "</think>"


class TemplatePolicy(enum.Enum):
    ROUND_ROBIN = "round_robin"
    TOP_ENRICHMENT = "top_enrichment"
    SEEDED_RANDOM = "seeded_random"


@dataclass(frozen=True)
class ControllerConfig:
    suffix_len: int = DEFAULT_SUFFIX_LEN
    cooldown_window: int = DEFAULT_COOLDOWN
    max_injections: int = DEFAULT_MAX_INJECTIONS
    template_policy: TemplatePolicy = TemplatePolicy.ROUND_ROBIN
    answer_markers: tuple[str, ...] = DEFAULT_ANSWER_MARKERS
    think_close_marker: str = DEFAULT_THINK_CLOSE

    def __post_init__(self):
        if self.suffix_len <= 0:
            raise ConfigError(f"suffix_len must be > 0, got {self.suffix_len}")
        if self.cooldown_window <= 0:
            raise ConfigError(f"cooldown_window must be > 0, got {self.cooldown_window}")
        if self.cooldown_window < self.suffix_len:
            raise ConfigError(
                f"cooldown_window ({self.cooldown_window}) must be >= "
                f"suffix_len ({self.suffix_len})"
            )
        if self.max_injections < 0:
            raise ConfigError(f"max_injections must be >= 0, got {self.max_injections}")
        if not self.think_close_marker:
            raise ConfigError("think_close_marker must be non-empty")


@dataclass(frozen=True)
class Injection:
    position: int  # 1-based step of the token that triggered
    template: str
    trigger_phrase: str

    def to_dict(self) -> dict[str, Any]:
        return {"position": self.position, "template": self.template,
                "trigger_phrase": self.trigger_phrase}


class DecodeSession:
    """Mutable state of one streaming decode pass."""

    def __init__(
        self,
        config: ControllerConfig,
        vocab: Optional[PhraseVocabulary],
        seed: int = 0,
    ):
        self.config = config
        self.pause_set: tuple[tuple[str, ...], ...] = (
            vocab.pause_set() if vocab is not None else ()
        )
        self.templates = tuple(vocab.lookback_templates) if vocab is not None else ()
        if self.pause_set and not self.templates:
            raise ConfigError(
                "vocabulary has pause phrases but no lookback templates to inject"
            )
        self.emitted: list[TraceToken] = []
        self.words = WordBuffer()
        # Sentinel above the window so the very first match may trigger.
        self.tokens_since_trigger = config.cooldown_window + 1
        self.in_answer_phase = False
        self.injections: list[Injection] = []
        self.budget_used = 0
        self.truncated = False
        self._markers = tuple(config.answer_markers) + (config.think_close_marker,)
        self._marker_cap = 2 * max(len(m) for m in self._markers)
        self._tail = ""
        self._round_robin = 0
        self._rng = random.Random(seed)

    # -- stream state updates ------------------------------------------

    def _phase_for(self, text: str) -> Phase:
        if self.in_answer_phase:
            return Phase.ANSWER
        self._tail = (self._tail + text)[-max(self._marker_cap, len(text)):]
        if any(marker in self._tail for marker in self._markers):
            self.in_answer_phase = True
            return Phase.ANSWER
        return Phase.THINKING

    def push_generated(self, text: str, logprob: float, bill: bool = True) -> None:
        phase = self._phase_for(text)
        self.emitted.append(TraceToken(text=text, logprob=logprob, phase=phase))
        self.words.push(text)
        if bill:
            self.budget_used += 1
        if phase is Phase.THINKING:
            self.tokens_since_trigger += 1

    def emitted_texts(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.emitted)

    @property
    def rolling_suffix(self) -> tuple[str, ...]:
        return tuple(self.words.suffix(self.config.suffix_len))

    # -- trigger rule ----------------------------------------------------

    def should_trigger(self) -> Optional[str]:
        """Longest pause phrase ending the rolling suffix, if all gates pass."""
        if self.in_answer_phase:
            return None
        if self.tokens_since_trigger <= self.config.cooldown_window:
            return None
        if len(self.injections) >= self.config.max_injections:
            return None
        suffix = self.rolling_suffix
        if not suffix:
            return None
        best: Optional[tuple[str, ...]] = None
        for phrase in self.pause_set:
            n = len(phrase)
            if n > len(suffix) or n > self.config.suffix_len:
                continue
            if tuple(suffix[-n:]) == phrase:
                if best is None or n > len(best):
                    best = phrase
        return " ".join(best) if best else None

    # -- injection ---------------------------------------------------------

    def choose_template(self) -> str:
        policy = self.config.template_policy
        if policy is TemplatePolicy.ROUND_ROBIN:
            entry = self.templates[self._round_robin % len(self.templates)]
            self._round_robin += 1
        elif policy is TemplatePolicy.TOP_ENRICHMENT:
            entry = max(self.templates, key=lambda e: e.enrichment)
        else:
            entry = self._rng.choice(self.templates)
        return entry.text

    def inject(self, trigger_phrase: str) -> str:
        if not self.templates:
            raise ConfigError("no lookback templates available")
        template = self.choose_template()
        position = len(self.emitted)
        phase = self._phase_for(template)
        self.emitted.append(TraceToken(text=template, logprob=0.0,
                                       phase=phase, injected=True))
        self.words.push(template)
        self.injections.append(Injection(position=position, template=template,
                                         trigger_phrase=trigger_phrase))
        self.tokens_since_trigger = 0
        return template


@dataclass(frozen=True)
class DecodeOutcome:
    trace: Optional[ThinkingTrace]
    injections: tuple[Injection, ...]
    branch_logs: tuple[BranchLog, ...]
    status: str
    truncated: bool
    budget_used: int

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_line_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {} if self.trace is None else trace_to_dict(self.trace)
        out["status"] = self.status
        out["truncated"] = self.truncated
        out["budget_used"] = self.budget_used
        out["injections"] = [i.to_dict() for i in self.injections]
        if self.branch_logs:
            out["branching"] = [b.to_dict() for b in self.branch_logs]
        return out


def run_decode(
    question_text: str,
    context: VisualContext,
    backend: Backend,
    config: ControllerConfig,
    vocab: Optional[PhraseVocabulary] = None,
    sampling: Optional[SamplingParams] = None,
    budget: int = 32768,
    branching: Optional[BranchingConfig] = None,
    question_id: str = "",
    pass_index: int = 0,
    model_id: str = "",
    category: str = "",
    difficulty: Difficulty = Difficulty.UNKNOWN,
) -> DecodeOutcome:
    """Decode one pass with lookback injection; optionally branch on triggers.

    With vocab=None (or an empty pause set) this is a pass-through decode
    that reproduces the unmodified model stream. The base controller makes
    no scoring calls; only the optional branching phase scores.
    """
    if sampling is None:
        sampling = SamplingParams()
    if budget <= 0:
        raise ConfigError(f"token budget must be > 0, got {budget}")
    session = DecodeSession(config, vocab, seed=sampling.seed)
    branch_logs: list[BranchLog] = []
    status = "ok"

    while True:
        remaining = budget - session.budget_used
        if remaining <= 0:
            session.truncated = True
            break
        request = GenerateRequest(
            question_text=question_text,
            context=context,
            prefix=session.emitted_texts(),
            sampling=replace(sampling, max_new_tokens=remaining),
            model_id=model_id,
        )
        try:
            stream = backend.generate_stream(request)
        except (BackendError, DataIntegrityError) as exc:
            status = f"error: {exc}"
            break

        injected = False
        try:
            for chunk in stream:
                session.push_generated(chunk.text, chunk.logprob)
                if session.budget_used >= budget:
                    session.truncated = True
                    stream.close()
                    break
                phrase = session.should_trigger()
                if phrase is None:
                    continue
                template = session.inject(phrase)
                stream.close()
                injected = True
                if branching is not None and branching.enabled:
                    try:
                        log = branch_phase(
                            backend=backend,
                            question_text=question_text,
                            context=context,
                            session=session,
                            sampling=sampling,
                            branching=branching,
                            model_id=model_id,
                        )
                    except (BackendError, DataIntegrityError) as exc:
                        status = f"error: {exc}"
                        injected = False
                        session.truncated = False
                    else:
                        if log is not None:
                            branch_logs.append(log)
                break
        except (StreamInterruptedError, DataIntegrityError) as exc:
            status = f"error: {exc}"
            break

        if status != "ok" or session.truncated:
            break
        if injected:
            continue
        # Naturally finished stream, or an empty continuation after the last
        # injection: the pass is over.
        if stream.truncated:
            session.truncated = True
        break

    trace = None
    if session.emitted:
        trace = ThinkingTrace(
            question_id=question_id,
            pass_index=pass_index,
            tokens=tuple(session.emitted),
            model_id=model_id,
            category=category,
            difficulty=difficulty,
        )
    elif status == "ok":
        status = "error: backend produced no tokens"
    return DecodeOutcome(
        trace=trace,
        injections=tuple(session.injections),
        branch_logs=tuple(branch_logs),
        status=status,
        truncated=session.truncated,
        budget_used=session.budget_used,
    )
