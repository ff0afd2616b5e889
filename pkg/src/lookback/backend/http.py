"""HTTP client for scoring servers speaking the JSON wire protocol.

Two endpoints are used: ``POST /v1/score`` returns a single JSON body with
per-token logprobs, and ``POST /v1/generate`` streams newline-delimited JSON
chunks terminated by a ``{"done": true, ...}`` line.

Transport failures (connection refused, timeouts, 5xx) are retried up to
``max_retries`` times with exponential backoff. Malformed payloads are never
retried: the server is misbehaving, not the network, and a retry would just
get the same garbage again. A disconnect in the middle of a generate stream
raises StreamInterruptedError carrying the tokens received so far; resuming
is the caller's decision.
"""

from __future__ import annotations

import time
from typing import Any, Optional

import httpx

from ..errors import (
    BackendError,
    ProtocolViolationError,
    StreamInterruptedError,
    TransportError,
)
from .types import (
    CallLog,
    CallRecord,
    GenerateRequest,
    ScoreRequest,
    ScoreResponse,
    StreamChunk,
    TokenStream,
)
from .wire import (
    decode_score_response,
    decode_stream_line,
    encode_generate_request,
    encode_score_request,
)

DEFAULT_TIMEOUT = 120.0


class HttpBackend:
    """:class:`Backend` implementation over HTTP."""

    def __init__(
        self,
        base_url: str,
        *,
        api_key: Optional[str] = None,
        timeout: float = DEFAULT_TIMEOUT,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        client: Optional[httpx.Client] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.calls = CallLog()
        headers = {"content-type": "application/json"}
        if api_key:
            headers["authorization"] = f"Bearer {api_key}"
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "HttpBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _sleep(self, attempt: int) -> None:
        time.sleep(self.backoff_base * (2 ** attempt))

    def _post_json(self, path: str, payload: dict[str, Any]) -> Any:
        """POST with retry on transport failures; returns the parsed body."""
        url = self.base_url + path
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = self._client.post(url, json=payload)
            except httpx.TransportError as exc:
                last = exc
                if attempt < self.max_retries:
                    self._sleep(attempt)
                continue
            if response.status_code >= 500:
                last = BackendError(f"server error {response.status_code} from {path}")
                if attempt < self.max_retries:
                    self._sleep(attempt)
                continue
            if response.status_code != 200:
                raise BackendError(
                    f"{path} returned {response.status_code}: {response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise ProtocolViolationError(f"{path} returned non-JSON body") from exc
        raise TransportError(
            f"{path} failed after {self.max_retries + 1} attempts: {last}",
            attempts=self.max_retries + 1,
        )

    def score(self, request: ScoreRequest) -> ScoreResponse:
        self.calls.add(CallRecord(op="score", question_text=request.question_text,
                                  context_kind=request.context.kind.value,
                                  n_tokens=len(request.forced_continuation)))
        body = self._post_json("/v1/score", encode_score_request(request))
        return decode_score_response(body, expected_len=len(request.forced_continuation))

    def generate_stream(self, request: GenerateRequest) -> TokenStream:
        self.calls.add(CallRecord(op="generate", question_text=request.question_text,
                                  context_kind=request.context.kind.value,
                                  n_tokens=len(request.prefix),
                                  seed=request.sampling.seed))
        url = self.base_url + "/v1/generate"
        payload = encode_generate_request(request)

        # Opening the stream gets the retry treatment; once the first byte
        # has flowed, a failure is an interruption, not a retriable call.
        last: Exception | None = None
        response = None
        for attempt in range(self.max_retries + 1):
            try:
                req = self._client.build_request("POST", url, json=payload)
                response = self._client.send(req, stream=True)
            except httpx.TransportError as exc:
                last = exc
                if attempt < self.max_retries:
                    self._sleep(attempt)
                continue
            if response.status_code >= 500:
                response.close()
                response = None
                last = BackendError(f"server error from /v1/generate")
                if attempt < self.max_retries:
                    self._sleep(attempt)
                continue
            if response.status_code != 200:
                response.read()
                detail = response.text[:200]
                response.close()
                raise BackendError(f"/v1/generate returned {response.status_code}: {detail}")
            break
        if response is None:
            raise TransportError(
                f"/v1/generate failed after {self.max_retries + 1} attempts: {last}",
                attempts=self.max_retries + 1,
            )

        stream_response = response

        def emit():
            import json as _json

            received: list[StreamChunk] = []
            index = 0
            try:
                for line in stream_response.iter_lines():
                    if not line.strip():
                        continue
                    try:
                        obj = _json.loads(line)
                    except ValueError as exc:
                        raise ProtocolViolationError(
                            f"generate stream sent non-JSON line: {line[:120]!r}"
                        ) from exc
                    index += 1
                    decoded = decode_stream_line(obj, index)
                    if isinstance(decoded, StreamChunk):
                        received.append(decoded)
                        yield decoded
                    else:
                        return decoded  # terminal line: truncated flag
            except httpx.TransportError as exc:
                raise StreamInterruptedError(
                    f"generate stream dropped after {len(received)} tokens: {exc}",
                    partial=tuple(received),
                ) from exc
            # Stream closed without a done line: the server went away.
            raise StreamInterruptedError(
                f"generate stream ended without a done line after {len(received)} tokens",
                partial=tuple(received),
            )

        return TokenStream(emit(), on_close=stream_response.close)
