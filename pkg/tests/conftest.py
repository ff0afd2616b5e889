"""Shared fixtures: trace builders and a scripted local HTTP server."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional, Sequence

import pytest

from lookback.traces import Difficulty, Phase, ThinkingTrace, TraceToken


def make_trace(
    texts: Sequence[str],
    question_id: str = "q1",
    pass_index: int = 0,
    logprob: float = -1.0,
    model_id: str = "m",
    correct: Optional[bool] = None,
    answer_from: Optional[int] = None,
) -> ThinkingTrace:
    tokens = tuple(
        TraceToken(
            text=t,
            logprob=logprob,
            phase=Phase.ANSWER if answer_from is not None and i >= answer_from
            else Phase.THINKING,
        )
        for i, t in enumerate(texts)
    )
    return ThinkingTrace(question_id=question_id, pass_index=pass_index,
                         tokens=tokens, model_id=model_id, correct=correct,
                         difficulty=Difficulty.UNKNOWN)


class WireScript:
    """Per-path FIFO of scripted HTTP responses plus a request log."""

    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.queues: dict[str, list[dict[str, Any]]] = {}
        self.requests: list[tuple[str, Any]] = []
        self.headers: list[dict[str, str]] = []

    def push(self, path: str, **action: Any) -> None:
        with self.lock:
            self.queues.setdefault(path, []).append(action)

    def pop(self, path: str) -> Optional[dict[str, Any]]:
        with self.lock:
            queue = self.queues.get(path)
            return queue.pop(0) if queue else None

    def bodies(self, path: str) -> list[Any]:
        with self.lock:
            return [body for p, body in self.requests if p == path]


def _encode_lines(lines: Sequence[Any]) -> bytes:
    return b"".join(json.dumps(obj).encode("utf-8") + b"\n" for obj in lines)


class _ScriptedHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    script: WireScript

    def log_message(self, *args: Any) -> None:
        pass

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        length = int(self.headers.get("content-length", 0))
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw)
        except ValueError:
            body = raw
        with self.script.lock:
            self.script.requests.append((self.path, body))
            self.script.headers.append(
                {k.lower(): v for k, v in self.headers.items()})
        action = self.script.pop(self.path)
        if action is None:
            action = {"status": 404, "body": "not scripted",
                      "ctype": "text/plain"}

        payload = action.get("body", b"")
        if "lines" in action:
            payload = _encode_lines(action["lines"])
        elif isinstance(payload, (dict, list)):
            payload = json.dumps(payload).encode("utf-8")
        elif isinstance(payload, str):
            payload = payload.encode("utf-8")

        status = action.get("status", 200)
        self.send_response(status)
        self.send_header("content-type",
                         action.get("ctype", "application/json"))
        if action.get("cut"):
            # Promise more bytes than will arrive, then drop the connection.
            self.send_header("content-length", str(len(payload) + 64))
            self.end_headers()
            self.wfile.write(payload)
            self.wfile.flush()
            self.connection.close()
            self.close_connection = True
            return
        self.send_header("content-length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


@pytest.fixture
def wire_server():
    """A local HTTP server returning scripted responses.

    Yields (script, base_url); push actions onto the script before making
    client calls. Actions: body=dict/str/bytes, lines=[objs] (JSONL),
    status=int, ctype=str, cut=True (disconnect mid-body).
    """
    script = WireScript()
    handler = type("Handler", (_ScriptedHandler,), {"script": script})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(
        target=lambda: server.serve_forever(poll_interval=0.02), daemon=True)
    thread.start()
    try:
        yield script, f"http://127.0.0.1:{server.server_port}"
    finally:
        server.shutdown()
        server.server_close()
