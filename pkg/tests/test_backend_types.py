"""Contract tests for backend domain types."""

from __future__ import annotations

import threading

import pytest

from lookback.backend.types import (
    CallLog,
    CallRecord,
    ContextKind,
    SamplingParams,
    ScoreRequest,
    ScoreResponse,
    StreamChunk,
    TokenStream,
    VisualContext,
    validate_alignment,
)
from lookback.errors import (
    DataIntegrityError,
    PreconditionError,
    ProtocolViolationError,
)


class TestVisualContext:
    def test_absent_carries_nothing(self):
        ctx = VisualContext.absent()
        assert ctx.kind is ContextKind.ABSENT
        assert ctx.image_payload == b""
        assert ctx.resolution is None

    def test_absent_rejects_payload(self):
        with pytest.raises(PreconditionError):
            VisualContext(kind=ContextKind.ABSENT, image_payload=b"x")

    def test_real_requires_payload(self):
        with pytest.raises(PreconditionError):
            VisualContext(kind=ContextKind.REAL, resolution=(2, 2))

    def test_real_requires_resolution(self):
        with pytest.raises(PreconditionError):
            VisualContext(kind=ContextKind.REAL, image_payload=b"x")

    def test_rejects_nonpositive_resolution(self):
        with pytest.raises(PreconditionError):
            VisualContext(kind=ContextKind.NOISE, image_payload=b"x",
                          resolution=(0, 4))

    def test_real_constructor(self):
        ctx = VisualContext.real(b"png", "image/png", (3, 5))
        assert ctx.kind is ContextKind.REAL
        assert ctx.resolution == (3, 5)


class TestScoreTypes:
    def test_request_requires_continuation(self):
        with pytest.raises(PreconditionError):
            ScoreRequest(question_text="q", context=VisualContext.absent(),
                         forced_continuation=(), model_id="m")

    def test_response_rejects_positive_logprob(self):
        with pytest.raises(DataIntegrityError):
            ScoreResponse(token_logprobs=(("a", 0.5),))

    def test_response_rejects_nonfinite(self):
        with pytest.raises(DataIntegrityError):
            ScoreResponse(token_logprobs=(("a", float("nan")),))

    def test_logprobs_property(self):
        resp = ScoreResponse(token_logprobs=(("a", -1.0), ("b", -2.0)))
        assert resp.logprobs == (-1.0, -2.0)

    def test_alignment_check(self):
        req = ScoreRequest(question_text="q", context=VisualContext.absent(),
                           forced_continuation=("a", "b"), model_id="m")
        ok = ScoreResponse(token_logprobs=(("a", -1.0), ("b", -1.0)))
        validate_alignment(req, ok)
        short = ScoreResponse(token_logprobs=(("a", -1.0),))
        with pytest.raises(ProtocolViolationError):
            validate_alignment(req, short)


class TestSamplingParams:
    def test_defaults_valid(self):
        SamplingParams()

    @pytest.mark.parametrize("kwargs", [
        {"temperature": -0.1},
        {"top_p": 0.0},
        {"top_p": 1.5},
        {"max_new_tokens": 0},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(PreconditionError):
            SamplingParams(**kwargs)


class TestTokenStream:
    def _chunks(self, n, truncated):
        for i in range(n):
            yield StreamChunk(text=f"t{i}", logprob=-1.0, index=i + 1)
        return truncated

    def test_iterates_and_records_truncation(self):
        stream = TokenStream(self._chunks(3, truncated=True))
        texts = [c.text for c in stream]
        assert texts == ["t0", "t1", "t2"]
        assert stream.finished
        assert stream.truncated

    def test_untruncated_end(self):
        stream = TokenStream(self._chunks(2, truncated=False))
        list(stream)
        assert stream.finished
        assert not stream.truncated

    def test_close_callback_fires_once(self):
        closed = []
        stream = TokenStream(self._chunks(5, False), on_close=lambda: closed.append(1))
        next(stream)
        stream.close()
        stream.close()
        assert closed == [1]

    def test_exhaustion_also_closes(self):
        closed = []
        stream = TokenStream(self._chunks(1, False), on_close=lambda: closed.append(1))
        list(stream)
        assert closed == [1]


class TestCallLog:
    def test_count_by_op(self):
        log = CallLog()
        log.add(CallRecord(op="score", question_text="q", context_kind="real"))
        log.add(CallRecord(op="generate", question_text="q", context_kind="real"))
        assert log.count() == 2
        assert log.count("score") == 1
        assert log.count("generate") == 1

    def test_threaded_appends_all_land(self):
        log = CallLog()

        def add_many():
            for _ in range(200):
                log.add(CallRecord(op="score", question_text="q",
                                   context_kind="absent"))

        threads = [threading.Thread(target=add_many) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert log.count() == 1600
