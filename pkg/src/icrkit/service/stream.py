"""Newline-delimited JSON reward serving over standard streams or TCP.

One request line in, one response line out, matched by request_id.
Responses may interleave across requests under concurrency, but each
write is a single atomic line; a malformed line produces an error object
carrying its line number and never terminates the stream.
"""

from __future__ import annotations

import json
import socketserver
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable

from .scoring import RewardScorer


def process_stream(
    scorer: RewardScorer,
    reader: Iterable[str],
    write_line: Callable[[str], None],
    workers: int = 8,
) -> dict:
    """Drive one NDJSON dialog to EOF; drains in-flight work before returning."""
    lock = threading.Lock()
    stats = {"requests": 0, "errors": 0}

    def emit(obj: dict) -> None:
        line = json.dumps(obj, ensure_ascii=False)
        with lock:
            write_line(line + "\n")
            if "error" in obj:
                stats["errors"] += 1

    def handle(raw: str, lineno: int) -> None:
        try:
            request = json.loads(raw)
            if not isinstance(request, dict):
                raise ValueError("request must be a JSON object")
        except ValueError as exc:
            emit({"request_id": None, "error": f"malformed request: {exc}", "line": lineno})
            return
        emit(scorer.score_request(request))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for lineno, raw in enumerate(reader, start=1):
            raw = raw.strip()
            if not raw:
                continue
            stats["requests"] += 1
            pool.submit(handle, raw, lineno)
    return stats


def serve_stdio(scorer: RewardScorer, workers: int = 8) -> dict:
    import sys

    def write_line(line: str) -> None:
        sys.stdout.write(line)
        sys.stdout.flush()

    return process_stream(scorer, sys.stdin, write_line, workers)


class _RewardTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, scorer: RewardScorer, workers: int):
        self.scorer = scorer
        self.workers = workers
        super().__init__(address, _RewardHandler)


class _RewardHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        server: _RewardTCPServer = self.server  # type: ignore[assignment]

        def write_line(line: str) -> None:
            self.wfile.write(line.encode("utf-8"))
            self.wfile.flush()

        reader = (raw.decode("utf-8") for raw in self.rfile)
        try:
            process_stream(server.scorer, reader, write_line, server.workers)
        except (BrokenPipeError, ConnectionResetError):
            pass  # client went away; nothing to drain for


def serve_tcp(
    scorer: RewardScorer,
    host: str = "127.0.0.1",
    port: int = 0,
    workers: int = 8,
    announce: Callable[[dict], None] | None = None,
) -> _RewardTCPServer:
    """Start a threading TCP server; returns it so callers own shutdown.

    ``announce`` receives ``{"event": "listening", "host", "port"}`` once
    the socket is bound (port 0 picks a free port).
    """
    server = _RewardTCPServer((host, port), scorer, workers)
    bound_host, bound_port = server.server_address[:2]
    if announce is not None:
        announce({"event": "listening", "host": bound_host, "port": bound_port})
    return server
