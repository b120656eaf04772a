"""TCP front end for an :class:`~pitpm.aggregator.Aggregator`."""

from __future__ import annotations

import logging
import socketserver
import threading

from .aggregator import Aggregator
from .errors import DecodeError
from .wire import ERROR, encode_error, frame, read_frame

log = logging.getLogger(__name__)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        agg: Aggregator = self.server.aggregator
        while True:
            try:
                msg_type, payload = read_frame(self.request)
            except (ConnectionError, OSError):
                return
            except DecodeError as exc:
                self.request.sendall(frame(ERROR, encode_error(exc)))
                return
            rtype, rpayload = agg.handle_frame(msg_type, payload)
            self.request.sendall(frame(rtype, rpayload))


class AggregatorServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, aggregator: Aggregator, host: str = "127.0.0.1", port: int = 7744):
        super().__init__((host, port), _Handler)
        self.aggregator = aggregator

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def parse_listen(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)
