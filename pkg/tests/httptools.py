"""Tiny HTTP helpers for the test suite: a webhook receiver and raw clients."""

from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class WebhookReceiver:
    """Local HTTP listener capturing webhook POSTs.

    Use as a context manager; ``payloads`` holds decoded JSON bodies and
    ``request_count`` counts every request seen (including failed ones when
    ``status`` is non-2xx).
    """

    def __init__(self, status: int = 200):
        self.status = status
        self.payloads: list[dict] = []
        self.request_count = 0
        self._lock = threading.Lock()
        receiver = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (stdlib naming)
                length = int(self.headers.get("Content-Length", "0"))
                body = self.rfile.read(length)
                with receiver._lock:
                    receiver.request_count += 1
                    if receiver.status < 300:
                        try:
                            receiver.payloads.append(json.loads(body))
                        except json.JSONDecodeError:
                            pass
                self.send_response(receiver.status)
                self.send_header("Content-Length", "0")
                self.end_headers()

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def uri(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/hook"

    def __enter__(self) -> "WebhookReceiver":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()


def http_get(url: str, headers: dict | None = None) -> tuple[int, dict | list | None]:
    request = urllib.request.Request(url, headers=headers or {})
    try:
        with urllib.request.urlopen(request, timeout=5) as resp:
            return resp.status, json.loads(resp.read() or b"null")
    except urllib.error.HTTPError as err:
        try:
            body = json.loads(err.read() or b"null")
        except json.JSONDecodeError:
            body = None
        return err.code, body


def http_send(url: str, method: str, body: dict, headers: dict | None = None
              ) -> tuple[int, dict | list | None]:
    request = urllib.request.Request(
        url,
        data=json.dumps(body).encode(),
        headers={"Content-Type": "application/json", **(headers or {})},
        method=method,
    )
    try:
        with urllib.request.urlopen(request, timeout=5) as resp:
            return resp.status, json.loads(resp.read() or b"null")
    except urllib.error.HTTPError as err:
        try:
            payload = json.loads(err.read() or b"null")
        except json.JSONDecodeError:
            payload = None
        return err.code, payload
