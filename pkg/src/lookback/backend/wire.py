"""JSON wire codec for the two-endpoint backend protocol.

Envelope shapes:

  POST /v1/score    {model, question, image, continuation: [str]}
                 -> {model, tokens: [{text, logprob}]}
  POST /v1/generate {model, question, image, prefix: [str],
                     temperature, top_p, seed, max_new_tokens}
                 -> newline-delimited {text, logprob} chunks,
                    terminated by {done: true, truncated: bool}

``image`` is {kind: "real"|"noise"|"absent"} plus, for non-absent kinds,
base64 ``data``, ``mime`` and the pixel ``width``/``height``. Image bytes ride
base64 so real and noise payloads are bit-stable across runs and transports.

Decoders validate as they parse: a malformed message raises the designated
error instead of producing a half-formed object.
"""

from __future__ import annotations

import base64
import math
from typing import Any, Mapping

from ..errors import DataIntegrityError, ProtocolViolationError
from .types import (
    ContextKind,
    GenerateRequest,
    SamplingParams,
    ScoreRequest,
    ScoreResponse,
    StreamChunk,
    VisualContext,
)


def encode_context(ctx: VisualContext) -> dict[str, Any]:
    if ctx.kind is ContextKind.ABSENT:
        return {"kind": "absent"}
    assert ctx.resolution is not None
    return {
        "kind": ctx.kind.value,
        "data": base64.b64encode(ctx.image_payload).decode("ascii"),
        "mime": ctx.media_type,
        "width": ctx.resolution[0],
        "height": ctx.resolution[1],
    }


def decode_context(obj: Mapping[str, Any]) -> VisualContext:
    kind_raw = obj.get("kind")
    try:
        kind = ContextKind(kind_raw)
    except ValueError:
        raise ProtocolViolationError(f"unknown image kind {kind_raw!r}") from None
    if kind is ContextKind.ABSENT:
        return VisualContext.absent()
    try:
        payload = base64.b64decode(obj["data"], validate=True)
    except (KeyError, ValueError) as exc:
        raise ProtocolViolationError(f"bad image payload: {exc}") from None
    width, height = obj.get("width"), obj.get("height")
    if not isinstance(width, int) or not isinstance(height, int):
        raise ProtocolViolationError("image envelope missing width/height")
    return VisualContext(kind=kind, image_payload=payload,
                         media_type=str(obj.get("mime", "")),
                         resolution=(width, height))


def encode_score_request(req: ScoreRequest) -> dict[str, Any]:
    return {
        "model": req.model_id,
        "question": req.question_text,
        "image": encode_context(req.context),
        "continuation": list(req.forced_continuation),
    }


def decode_score_request(obj: Mapping[str, Any]) -> ScoreRequest:
    continuation = obj.get("continuation")
    if not isinstance(continuation, list) or not continuation:
        raise ProtocolViolationError("score request needs a non-empty continuation list")
    return ScoreRequest(
        question_text=str(obj.get("question", "")),
        context=decode_context(obj.get("image", {})),
        forced_continuation=tuple(str(t) for t in continuation),
        model_id=str(obj.get("model", "")),
    )


def encode_score_response(resp: ScoreResponse) -> dict[str, Any]:
    return {
        "model": resp.model_echo,
        "tokens": [{"text": t, "logprob": lp} for t, lp in resp.token_logprobs],
    }


def decode_score_response(obj: Mapping[str, Any], expected_len: int | None = None) -> ScoreResponse:
    tokens = obj.get("tokens")
    if not isinstance(tokens, list):
        raise ProtocolViolationError("score response missing 'tokens' list")
    pairs: list[tuple[str, float]] = []
    for item in tokens:
        if not isinstance(item, Mapping) or "text" not in item or "logprob" not in item:
            raise ProtocolViolationError(f"malformed token entry: {item!r}")
        text = str(item["text"])
        lp = item["logprob"]
        if not isinstance(lp, (int, float)) or isinstance(lp, bool) or not math.isfinite(float(lp)):
            raise DataIntegrityError(f"non-finite logprob for token {text!r}: {lp!r}")
        if float(lp) > 0.0:
            raise DataIntegrityError(f"positive logprob for token {text!r}: {lp!r}")
        pairs.append((text, float(lp)))
    if expected_len is not None and len(pairs) != expected_len:
        raise ProtocolViolationError(
            f"server returned {len(pairs)} logprobs for a {expected_len}-token continuation"
        )
    return ScoreResponse(token_logprobs=tuple(pairs), model_echo=str(obj.get("model", "")))


def encode_generate_request(req: GenerateRequest) -> dict[str, Any]:
    s = req.sampling
    return {
        "model": req.model_id,
        "question": req.question_text,
        "image": encode_context(req.context),
        "prefix": list(req.prefix),
        "temperature": s.temperature,
        "top_p": s.top_p,
        "seed": s.seed,
        "max_new_tokens": s.max_new_tokens,
    }


def decode_generate_request(obj: Mapping[str, Any]) -> GenerateRequest:
    prefix = obj.get("prefix", [])
    if not isinstance(prefix, list):
        raise ProtocolViolationError("generate request 'prefix' must be a list")
    sampling = SamplingParams(
        temperature=float(obj.get("temperature", 1.0)),
        top_p=float(obj.get("top_p", 1.0)),
        seed=int(obj.get("seed", 0)),
        max_new_tokens=int(obj.get("max_new_tokens", 1)),
    )
    return GenerateRequest(
        question_text=str(obj.get("question", "")),
        context=decode_context(obj.get("image", {})),
        prefix=tuple(str(t) for t in prefix),
        sampling=sampling,
        model_id=str(obj.get("model", "")),
    )


def encode_stream_chunk(chunk: StreamChunk) -> dict[str, Any]:
    return {"text": chunk.text, "logprob": chunk.logprob}


def encode_stream_end(truncated: bool) -> dict[str, Any]:
    return {"done": True, "truncated": bool(truncated)}


def decode_stream_line(obj: Mapping[str, Any], index: int) -> StreamChunk | bool | None:
    """Parse one streamed object.

    Returns a :class:`StreamChunk` for a token line, the truncation flag
    (bool) for the terminal line, or raises on malformed content.
    """
    if obj.get("done"):
        return bool(obj.get("truncated", False))
    if "text" not in obj or "logprob" not in obj:
        raise ProtocolViolationError(f"malformed stream chunk: {obj!r}")
    lp = obj["logprob"]
    if not isinstance(lp, (int, float)) or isinstance(lp, bool) or not math.isfinite(float(lp)):
        raise DataIntegrityError(f"non-finite logprob in stream chunk: {obj!r}")
    return StreamChunk(text=str(obj["text"]), logprob=float(lp), index=index)
