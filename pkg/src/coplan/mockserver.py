"""Bundled stand-in for the remote inference service, for tests and demos.

``POST /plan`` accepts the planner request body and answers according to
the server mode:

``zero``     correct-length all-zero residuals
``shift``    correct-length residuals moving waypoints 1.. by ``shift`` m rightward
``short``    one residual pair too few
``delay``    sleeps ``delay`` seconds, then answers like ``zero``
``text``     free text wrapping a residual array
``garbage``  a body without any residual array
``error``    HTTP 500
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Tuple

MODES = ("zero", "shift", "short", "delay", "text", "garbage", "error")


@dataclass
class MockSettings:
    mode: str = "zero"
    delay: float = 2.0
    shift: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mock mode {self.mode!r}; expected one of {MODES}")


def _residuals(m: int, settings: MockSettings) -> list:
    if settings.mode == "shift":
        return [[0.0, 0.0]] + [[0.0, settings.shift]] * (m - 1) if m else []
    n = max(m - 1, 0) if settings.mode == "short" else m
    return [[0.0, 0.0]] * n


class _Handler(BaseHTTPRequestHandler):
    settings: MockSettings = MockSettings()

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _reply(self, status: int, body: str, ctype: str = "application/json") -> None:
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        try:
            self.wfile.write(data)
        except (BrokenPipeError, ConnectionResetError):
            pass  # client gave up (timeout path)

    def do_GET(self):
        if self.path.rstrip("/") == "/health":
            self._reply(200, json.dumps({"status": "ok", "mode": self.settings.mode}))
        else:
            self._reply(404, json.dumps({"error": "not found"}))

    def do_POST(self):
        if self.path.rstrip("/") != "/plan":
            self._reply(404, json.dumps({"error": "not found"}))
            return
        length = int(self.headers.get("Content-Length", 0))
        try:
            request = json.loads(self.rfile.read(length) or b"{}")
            m = int(request["num_waypoints"])
        except (ValueError, KeyError, TypeError):
            self._reply(400, json.dumps({"error": "bad request"}))
            return
        s = self.settings
        if s.mode == "delay":
            time.sleep(s.delay)
        if s.mode == "error":
            self._reply(500, json.dumps({"error": "internal"}))
        elif s.mode == "garbage":
            self._reply(200, "I am not sure what to do here.", "text/plain")
        elif s.mode == "text":
            body = "Reasoning: the road ahead is clear.\nResiduals: " + json.dumps(_residuals(m, s)) + "\n"
            self._reply(200, body, "text/plain")
        else:
            body = {"residuals": _residuals(m, s), "reasoning": f"mock server in {s.mode} mode"}
            self._reply(200, json.dumps(body))


def make_server(settings: MockSettings, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("MockHandler", (_Handler,), {"settings": settings})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def start_background(settings: MockSettings, host: str = "127.0.0.1", port: int = 0
                     ) -> Tuple[ThreadingHTTPServer, str]:
    """Serve on a daemon thread; returns the server and its base URL."""
    server = make_server(settings, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    h, p = server.server_address[:2]
    return server, f"http://{h}:{p}"
