"""Shared fixtures: mock model servers and a local fixture web site."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from ragchat.mocks import serve_mock_llm, serve_mock_media, serve_mock_stack

FIXTURE_PAGE_HTML = (
    "<html><head><title>T</title></head>"
    "<body><p>Body</p><script>var x = 1;</script></body></html>"
)


class _SiteHandler(BaseHTTPRequestHandler):
    """Tiny web site with the failure modes fetch_page must handle."""

    def log_message(self, fmt, *args):
        pass

    def _send(self, status, body: bytes, content_type="text/html; charset=utf-8",
              headers=None):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path.startswith("/ddg"):
            payload = {
                "Heading": "Biomass",
                "Answer": "",
                "AbstractText": "Biomass is organic material used as fuel.",
                "AbstractURL": "https://encyclopedia.test/biomass",
                "RelatedTopics": [
                    {
                        "FirstURL": "https://links.test/biogas",
                        "Text": "Biogas - gas produced by anaerobic digestion",
                    },
                    {
                        "Topics": [
                            {
                                "FirstURL": "https://links.test/pyrolysis",
                                "Text": "Pyrolysis - thermal decomposition of material",
                            }
                        ]
                    },
                ],
            }
            self._send(
                200,
                json.dumps(payload).encode(),
                content_type="application/json",
            )
        elif self.path == "/page":
            self._send(200, FIXTURE_PAGE_HTML.encode())
        elif self.path == "/plain":
            self._send(200, b"just plain text", content_type="text/plain")
        elif self.path == "/empty":
            self._send(200, b"<html><body>   </body></html>")
        elif self.path == "/binary":
            self._send(200, b"\x00\x01\x02", content_type="application/octet-stream")
        elif self.path == "/big":
            self._send(200, b"x" * (3 * 1024 * 1024))
        elif self.path.startswith("/redirect/"):
            n = int(self.path.rsplit("/", 1)[1])
            target = "/page" if n <= 0 else f"/redirect/{n - 1}"
            self._send(302, b"", headers={"Location": target})
        else:
            self._send(404, b"not found")

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        self.rfile.read(length)
        if self.path.startswith("/notpng"):
            self._send(200, b"definitely not an image", content_type="text/plain")
        elif self.path.startswith("/badjson"):
            self._send(200, b"{]", content_type="application/json")
        elif self.path.startswith("/wrongshape"):
            self._send(200, b'{"nope": 1}', content_type="application/json")
        else:
            self._send(404, b"not found")


class FixtureSite:
    def __init__(self):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _SiteHandler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()
        self.base_url = f"http://127.0.0.1:{self.server.server_address[1]}"

    def stop(self):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)


@pytest.fixture(scope="session")
def site():
    site = FixtureSite()
    yield site
    site.stop()


@pytest.fixture
def llm_echo():
    handle = serve_mock_llm(mode="echo")
    yield handle
    handle.stop()


@pytest.fixture
def llm_concat():
    handle = serve_mock_llm(mode="concat_mark")
    yield handle
    handle.stop()


@pytest.fixture
def llm_scripted():
    handles = []

    def make(script):
        handle = serve_mock_llm(mode="script", script=script)
        handles.append(handle)
        return handle

    yield make
    for handle in handles:
        handle.stop()


@pytest.fixture
def media_mock():
    handle = serve_mock_media()
    yield handle
    handle.stop()


@pytest.fixture
def stack_mock():
    handle = serve_mock_stack()
    yield handle
    handle.stop()
