"""Minimal HTTP front end that runs a query's plan and streams progress as SSE.

``POST /run`` with ``{"query": "..."}`` (or ``GET /run?query=...``) parses the
query, retrieves one tool per plan step, executes the plan with the simulated
executor and streams ``event: <type>`` / ``data: <json>`` frames until
``plan_finished``.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .config import Settings
from .embedding import EmbedderSpec
from .errors import ZSpaceError
from .intent import RuleBasedParser
from .orchestrator import SimulatedExecutor, ToolExecutor, start_plan
from .registry import Registry
from .retrieval import retrieve_plan

log = logging.getLogger(__name__)


def plan_for_query(
    query: str,
    registry: Registry,
    embedder: EmbedderSpec,
    settings: Settings,
    parser: RuleBasedParser | None = None,
):
    intent = (parser or RuleBasedParser()).parse(query)
    ranked = retrieve_plan(intent, registry, settings.retrieval, embedder)
    assignments = {sid: tools[0].name for sid, tools in ranked.items() if tools}
    return intent, assignments


def make_server(
    host: str,
    port: int,
    registry: Registry,
    embedder: EmbedderSpec,
    settings: Settings | None = None,
    executor_factory=None,
    parser: RuleBasedParser | None = None,
) -> ThreadingHTTPServer:
    settings = settings or Settings()
    executor_factory = executor_factory or (lambda: SimulatedExecutor())

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # route through logging, not stderr
            log.info("%s - %s", self.address_string(), fmt % args)

        def _fail(self, code: int, message: str) -> None:
            body = json.dumps({"error": message}).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _query_from_request(self) -> str | None:
            url = urlparse(self.path)
            if url.path != "/run":
                return None
            if self.command == "GET":
                return parse_qs(url.query).get("query", [""])[0]
            length = int(self.headers.get("Content-Length") or 0)
            payload = json.loads(self.rfile.read(length) or b"{}")
            return str(payload.get("query", "")) if isinstance(payload, dict) else ""

        def _run(self) -> None:
            try:
                query = self._query_from_request()
            except (ValueError, json.JSONDecodeError):
                self._fail(400, "request body must be JSON")
                return
            if query is None:
                self._fail(404, "unknown path")
                return
            try:
                intent, assignments = plan_for_query(query, registry, embedder, settings, parser)
                executor: ToolExecutor = executor_factory()
                _, channel = start_plan(intent.plan, assignments, executor, settings.orchestrator)
            except ZSpaceError as exc:
                self._fail(422, str(exc))
                return

            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Connection", "close")
            self.end_headers()
            self.close_connection = True
            for event in channel.subscribe(replay=True):
                self.wfile.write(event.to_sse().encode("utf-8"))
                self.wfile.flush()

        do_GET = _run
        do_POST = _run

    return ThreadingHTTPServer((host, port), Handler)


def serve_in_thread(server: ThreadingHTTPServer) -> threading.Thread:
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    return t
