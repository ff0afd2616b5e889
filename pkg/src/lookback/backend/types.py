"""Domain types for the generation/scoring backend contract.

Every other module talks to a model only through these types plus the
``Backend`` protocol, so swapping the HTTP client for the scripted mock (or
any future engine) never touches algorithm code.
"""

from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Protocol, Sequence, runtime_checkable

from ..errors import DataIntegrityError, PreconditionError


class ContextKind(enum.Enum):
    REAL = "real"
    NOISE = "noise"
    ABSENT = "absent"


@dataclass(frozen=True)
class VisualContext:
    """The image (or deliberate lack of one) a request is conditioned on.

    ``Absent`` carries no payload; ``Noise`` must keep the resolution of the
    real image it stands in for, so perplexity contrasts compare like with
    like.
    """

    kind: ContextKind
    image_payload: bytes = b""
    media_type: str = ""
    resolution: Optional[tuple[int, int]] = None

    def __post_init__(self) -> None:
        if self.kind is ContextKind.ABSENT:
            if self.image_payload:
                raise PreconditionError("absent context must carry no image payload")
        else:
            if not self.image_payload:
                raise PreconditionError(f"{self.kind.value} context requires an image payload")
            if self.resolution is None:
                raise PreconditionError(f"{self.kind.value} context requires a resolution")
            w, h = self.resolution
            if w <= 0 or h <= 0:
                raise PreconditionError("resolution must be positive")

    @classmethod
    def absent(cls) -> "VisualContext":
        return cls(kind=ContextKind.ABSENT)

    @classmethod
    def real(cls, payload: bytes, media_type: str, resolution: tuple[int, int]) -> "VisualContext":
        return cls(kind=ContextKind.REAL, image_payload=payload,
                   media_type=media_type, resolution=resolution)


@dataclass(frozen=True)
class ScoreRequest:
    """Teacher-forced scoring: logprob of each continuation token after the
    (question, context) prompt."""

    question_text: str
    context: VisualContext
    forced_continuation: tuple[str, ...]
    model_id: str

    def __post_init__(self) -> None:
        if not self.forced_continuation:
            raise PreconditionError("forced_continuation must be non-empty")
        object.__setattr__(self, "forced_continuation", tuple(self.forced_continuation))


@dataclass(frozen=True)
class ScoreResponse:
    token_logprobs: tuple[tuple[str, float], ...]
    model_echo: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "token_logprobs", tuple(self.token_logprobs))
        for text, lp in self.token_logprobs:
            if not math.isfinite(lp):
                raise DataIntegrityError(f"non-finite logprob for token {text!r}")
            if lp > 0.0:
                raise DataIntegrityError(f"positive logprob {lp} for token {text!r}")

    @property
    def logprobs(self) -> tuple[float, ...]:
        return tuple(lp for _, lp in self.token_logprobs)


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    top_p: float = 0.95
    seed: int = 0
    max_new_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise PreconditionError("temperature must be >= 0")
        if not (0.0 < self.top_p <= 1.0):
            raise PreconditionError("top_p must lie in (0, 1]")
        if self.max_new_tokens <= 0:
            raise PreconditionError("max_new_tokens must be > 0")


@dataclass(frozen=True)
class GenerateRequest:
    question_text: str
    context: VisualContext
    prefix: tuple[str, ...]
    sampling: SamplingParams
    model_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "prefix", tuple(self.prefix))


@dataclass(frozen=True)
class StreamChunk:
    """One streamed token: text, its logprob, and the 1-based cumulative count."""

    text: str
    logprob: float
    index: int


class TokenStream:
    """Iterator over streamed tokens with end-of-stream metadata.

    The consumer may stop iterating (or call :meth:`close`) at any point; the
    underlying transport is released. ``truncated`` is meaningful only after
    the stream ended on its own (``finished`` is True) and reports whether the
    server stopped because the new-token budget ran out.
    """

    def __init__(self, gen: Iterator[StreamChunk], on_close: Optional[Callable[[], None]] = None):
        self._gen = gen
        self._on_close = on_close
        self.finished = False
        self.truncated = False

    def __iter__(self) -> "TokenStream":
        return self

    def __next__(self) -> StreamChunk:
        try:
            return next(self._gen)
        except StopIteration as stop:
            self.finished = True
            self.truncated = bool(stop.value)
            self.close()
            raise StopIteration from None

    def close(self) -> None:
        closer = getattr(self._gen, "close", None)
        if closer is not None:
            closer()
        if self._on_close is not None:
            cb, self._on_close = self._on_close, None
            cb()


@dataclass(frozen=True)
class CallRecord:
    """One backend invocation, for budget accounting and no-scoring assertions."""

    op: str                      # "score" | "generate"
    question_text: str
    context_kind: str
    n_tokens: int = 0            # continuation length (score) / prefix length (generate)
    seed: Optional[int] = None


class CallLog:
    """Thread-safe append-only log of backend calls."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._records: list[CallRecord] = []

    def add(self, record: CallRecord) -> None:
        with self._lock:
            self._records.append(record)

    def records(self) -> tuple[CallRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def count(self, op: Optional[str] = None) -> int:
        with self._lock:
            if op is None:
                return len(self._records)
            return sum(1 for r in self._records if r.op == op)


@runtime_checkable
class Backend(Protocol):
    """Anything that can score a forced continuation and stream a generation."""

    calls: CallLog

    def score(self, request: ScoreRequest) -> ScoreResponse:
        ...

    def generate_stream(self, request: GenerateRequest) -> TokenStream:
        ...


def validate_alignment(request: ScoreRequest, response: ScoreResponse) -> None:
    """Enforce the score length law: one logprob per forced token, or error."""
    from ..errors import ProtocolViolationError

    got, want = len(response.token_logprobs), len(request.forced_continuation)
    if got != want:
        raise ProtocolViolationError(
            f"server returned {got} logprobs for a {want}-token continuation"
        )


def run_length(chunks: Sequence[StreamChunk]) -> int:
    return len(chunks)
