"""Model access layer: context types, wire codec, backends."""

from .types import (
    Backend,
    CallLog,
    CallRecord,
    ContextKind,
    GenerateRequest,
    SamplingParams,
    ScoreRequest,
    ScoreResponse,
    StreamChunk,
    TokenStream,
    VisualContext,
    validate_alignment,
)
from .noise import make_noise_context, noise_pixels
from .mock import MockBackend, MockScript, QuestionScript, load_mock_backend
from .http import HttpBackend

__all__ = [
    "Backend",
    "CallLog",
    "CallRecord",
    "ContextKind",
    "GenerateRequest",
    "HttpBackend",
    "MockBackend",
    "MockScript",
    "QuestionScript",
    "SamplingParams",
    "ScoreRequest",
    "ScoreResponse",
    "StreamChunk",
    "TokenStream",
    "VisualContext",
    "load_mock_backend",
    "make_noise_context",
    "noise_pixels",
    "validate_alignment",
]
