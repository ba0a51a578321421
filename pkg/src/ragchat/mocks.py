"""Deterministic mock servers for the LLM, embeddings, media, and search endpoints.

Every handler is a pure function of its request (plus the scripted state),
logs each request body for inspection, and runs on a plain threading HTTP
server so tests and the offline dev stack need no external processes.
"""

from __future__ import annotations

import errno
import json
import struct
import threading
import time
import zlib
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Sequence
from urllib.parse import parse_qs, urlparse

from .embedding import fnv1a64, hash_embed
from .exceptions import NoTokens, PortInUse

STREAM_DELTA_CHARS = 4

FIXTURE_PAGES = {
    "alpha": (
        "<html><head><title>Alpha Fixture</title></head><body>"
        "<p>Solar collectors turn sunlight into heat for drying wood chips.</p>"
        "<p>Drying raises the heating value of the fuel before combustion.</p>"
        "</body></html>"
    ),
    "beta": (
        "<html><head><title>Beta Fixture</title></head><body>"
        "<p>Anaerobic digesters ferment manure and crop waste into methane.</p>"
        "<p>The captured gas can drive engines or feed the grid.</p>"
        "</body></html>"
    ),
}


def tiny_png() -> bytes:
    """A valid 1x1 grayscale PNG, built from scratch."""

    def chunk(kind: bytes, payload: bytes) -> bytes:
        crc = zlib.crc32(kind + payload) & 0xFFFFFFFF
        return struct.pack(">I", len(payload)) + kind + payload + struct.pack(">I", crc)

    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 0, 0, 0, 0)
    idat = zlib.compress(b"\x00\x00")
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", idat)
        + chunk(b"IEND", b"")
    )


def concat_mark(text: str) -> str:
    """Deterministic content mark: S(first 8 hex chars of FNV-1a 64)."""
    digest = f"{fnv1a64(text.encode('utf-8')):016x}"
    return f"S({digest[:8]})"


class MockServerHandle:
    """Running mock server: base URL, ordered request log, scripted state."""

    def __init__(self, server: ThreadingHTTPServer, thread: threading.Thread):
        self._server = server
        self._thread = thread
        self.port = server.server_address[1]
        self.base_url = f"http://127.0.0.1:{self.port}"
        self.requests: list[dict] = []
        self.llm_mode = "echo"
        self.script: deque[str] = deque()
        self.fail_statuses: deque[int] = deque()
        self.delay_s = 0.0
        self.search_results: list[dict] | None = None
        self.instant_answer: str | None = "mock instant answer"
        self.embed_dim = 64
        self.prefix = ""
        self._lock = threading.Lock()

    def log(self, entry: dict) -> None:
        with self._lock:
            self.requests.append(entry)

    def fail_next(self, status: int, times: int = 1) -> None:
        """Make the next ``times`` LLM requests answer with ``status``."""
        self.fail_statuses.extend([status] * times)

    def default_search_results(self) -> list[dict]:
        return [
            {
                "title": f"{name.title()} Fixture",
                "url": f"{self.base_url}{self.prefix}/pages/{name}",
                "snippet": f"fixture page {name}",
            }
            for name in FIXTURE_PAGES
        ]

    def env_block(self) -> dict[str, str]:
        """Env vars pointing a service at this mock stack."""
        p = self.base_url + self.prefix
        return {
            "LLM_ENDPOINT": f"{p}/llm",
            "EMBED_ENDPOINT": f"{p}/embed",
            "SEARCH_ENDPOINT": p,
            "IMAGE_GEN_ENDPOINT": f"{p}/media/image/generate",
            "IMAGE_UNDERSTAND_ENDPOINT": f"{p}/media/image/understand",
            "ASR_ENDPOINT": f"{p}/media/asr",
        }

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)


class _MockHandler(BaseHTTPRequestHandler):
    handle_ref: MockServerHandle  # set by the factory
    routes: set  # enabled route groups

    def log_message(self, fmt, *args):  # silence default stderr noise
        pass

    # -- plumbing -----------------------------------------------------------

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0"))
        return self.rfile.read(length) if length else b""

    def _send_json(self, status: int, obj: dict, extra_headers: dict | None = None):
        data = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        for k, v in (extra_headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(data)

    def _send_bytes(self, status: int, data: bytes, content_type: str,
                    extra_headers: dict | None = None):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        for k, v in (extra_headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(data)

    def _route(self) -> tuple[str, dict]:
        """Canonical route path: strip the stack prefix and group aliases."""
        parsed = urlparse(self.path)
        path = parsed.path
        handle = self.handle_ref
        if handle.prefix and path.startswith(handle.prefix):
            path = path[len(handle.prefix) :]
        if path.startswith("/llm/"):
            path = path[len("/llm") :]
        elif path.startswith("/media/"):
            path = path[len("/media") :]
        return path, {k: v[0] for k, v in parse_qs(parsed.query).items()}

    # -- dispatch -----------------------------------------------------------

    def do_GET(self):
        path, query = self._route()
        handle = self.handle_ref
        handle.log({"method": "GET", "path": path, "query": query})
        if path.startswith("/pages/") and "search" in self.routes:
            name = path[len("/pages/") :]
            page = FIXTURE_PAGES.get(name)
            if page is None:
                self._send_json(404, {"error": "no such fixture page"})
            else:
                self._send_bytes(200, page.encode("utf-8"), "text/html; charset=utf-8")
            return
        if path == "/search" and "search" in self.routes:
            self._handle_search(query)
            return
        self._send_json(404, {"error": f"no route for GET {path}"})

    def do_POST(self):
        path, _ = self._route()
        handle = self.handle_ref
        raw = self._body()
        try:
            body = json.loads(raw) if raw else {}
        except json.JSONDecodeError:
            body = None
        handle.log({"method": "POST", "path": path, "json": body, "raw": raw})
        if handle.delay_s:
            time.sleep(handle.delay_s)
        if path == "/v1/chat/completions" and "llm" in self.routes:
            self._handle_llm(body)
        elif path == "/embed" and "embed" in self.routes:
            self._handle_embed(body)
        elif path == "/image/generate" and "media" in self.routes:
            self._handle_generate(body)
        elif path == "/image/understand" and "media" in self.routes:
            self._handle_understand(body)
        elif path == "/asr" and "media" in self.routes:
            self._handle_asr(body)
        else:
            self._send_json(404, {"error": f"no route for POST {path}"})

    # -- endpoint behaviors --------------------------------------------------

    def _handle_llm(self, body: dict | None):
        handle = self.handle_ref
        if handle.fail_statuses:
            status = handle.fail_statuses.popleft()
            self._send_json(status, {"error": f"scripted failure {status}"})
            return
        if not isinstance(body, dict) or "messages" not in body:
            self._send_json(400, {"error": "bad completion request"})
            return
        user_contents = [
            m.get("content", "") for m in body["messages"] if m.get("role") == "user"
        ]
        last_user = user_contents[-1] if user_contents else ""
        if handle.llm_mode == "echo":
            reply = last_user
        elif handle.llm_mode == "concat_mark":
            reply = concat_mark(last_user)
        elif handle.llm_mode == "script":
            if not handle.script:
                self._send_json(409, {"error": "script exhausted"})
                return
            reply = handle.script.popleft()
        else:
            self._send_json(500, {"error": f"unknown mock mode {handle.llm_mode}"})
            return
        if body.get("stream"):
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.end_headers()
            for i in range(0, max(len(reply), 1), STREAM_DELTA_CHARS):
                piece = reply[i : i + STREAM_DELTA_CHARS]
                event = {"choices": [{"delta": {"content": piece}}]}
                self.wfile.write(f"data: {json.dumps(event)}\n\n".encode("utf-8"))
            self.wfile.write(b"data: [DONE]\n\n")
            return
        self._send_json(
            200, {"choices": [{"message": {"role": "assistant", "content": reply}}]}
        )

    def _handle_embed(self, body: dict | None):
        handle = self.handle_ref
        if not isinstance(body, dict) or not isinstance(body.get("input"), list):
            self._send_json(400, {"error": "bad embeddings request"})
            return
        texts = body["input"]
        if not texts:
            self._send_json(400, {"error": "empty input"})
            return
        try:
            data = [
                {"index": i, "embedding": list(hash_embed(t, handle.embed_dim).values)}
                for i, t in enumerate(texts)
            ]
        except NoTokens as exc:
            self._send_json(400, {"error": str(exc)})
            return
        self._send_json(200, {"data": data})

    def _handle_search(self, query: dict):
        handle = self.handle_ref
        results = handle.search_results
        if results is None:
            results = handle.default_search_results()
        try:
            max_results = int(query.get("max", "10"))
        except ValueError:
            self._send_json(400, {"error": "bad max parameter"})
            return
        self._send_json(
            200,
            {
                "results": results[:max_results],
                "instant_answer": handle.instant_answer,
            },
        )

    def _handle_generate(self, body: dict | None):
        if not isinstance(body, dict) or not body.get("prompt"):
            self._send_json(400, {"error": "missing prompt"})
            return
        self._send_bytes(
            200,
            tiny_png(),
            "image/png",
            extra_headers={"X-Params": json.dumps(body)},
        )

    def _handle_understand(self, body: dict | None):
        if not isinstance(body, dict) or "image_url" not in body:
            self._send_json(400, {"error": "missing image_url"})
            return
        prompt = body.get("prompt", "")
        self._send_json(200, {"text": f"MOCK-VISION:{prompt}|{body['image_url']}"})

    def _handle_asr(self, body: dict | None):
        if not isinstance(body, dict) or not isinstance(body.get("raw"), list):
            self._send_json(400, {"error": "missing raw samples"})
            return
        self._send_json(200, {"text": f"MOCK-ASR:{len(body['raw'])}"})


class _QuietServer(ThreadingHTTPServer):
    """Suppresses client-disconnect noise; anything else still gets reported."""

    def handle_error(self, request, client_address):
        import sys

        exc = sys.exc_info()[1]
        if isinstance(exc, (BrokenPipeError, ConnectionResetError)):
            return
        super().handle_error(request, client_address)


def _serve(port: int, routes: set[str], prefix: str = "") -> MockServerHandle:
    handler = type("Handler", (_MockHandler,), {"routes": routes})
    try:
        server = _QuietServer(("127.0.0.1", port), handler)
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            raise PortInUse(f"port {port} is already in use") from exc
        raise
    server.daemon_threads = True
    thread = threading.Thread(
        target=lambda: server.serve_forever(poll_interval=0.02), daemon=True
    )
    handle = MockServerHandle(server, thread)
    handle.prefix = prefix
    handler.handle_ref = handle
    thread.start()
    return handle


def serve_mock_llm(
    port: int = 0, mode: str = "echo", script: Sequence[str] | None = None
) -> MockServerHandle:
    """Chat-completions mock at ``/v1/chat/completions``.

    Modes: ``echo`` returns the last user message; ``script`` returns queued
    replies in order and answers 409 once exhausted; ``concat_mark`` returns
    a deterministic hash mark of the last user message.
    """
    if mode not in ("echo", "script", "concat_mark"):
        raise ValueError(f"unknown mock llm mode {mode!r}")
    handle = _serve(port, routes={"llm"})
    handle.llm_mode = mode
    handle.script = deque(script or [])
    return handle


def serve_mock_media(port: int = 0) -> MockServerHandle:
    """Media mock: ``/image/generate``, ``/image/understand``, and ``/asr``."""
    return _serve(port, routes={"media"})


def serve_mock_stack(port: int = 0) -> MockServerHandle:
    """All mocks on one port under ``/mock/*``; pairs with ``env_block()``."""
    return _serve(port, routes={"llm", "embed", "media", "search"}, prefix="/mock")
