"""Newline-delimited JSON over a local TCP socket."""

from __future__ import annotations

import socketserver
import threading
from typing import Tuple

from .engine import AssistanceService
from .protocol import handle_line


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        service: AssistanceService = self.server.service  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            self.wfile.write((handle_line(service, line) + "\n").encode("utf-8"))
            self.wfile.flush()


class NdjsonServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, service: AssistanceService, address: Tuple[str, int] = ("127.0.0.1", 0)):
        self.service = service
        super().__init__(address, _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t
