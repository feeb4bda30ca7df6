"""A local OpenAI-compatible chat-completions stub for backend contract tests."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional


def completion(content: str, finish_reason: str = "stop") -> dict:
    return {
        "id": "stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": finish_reason}],
    }


@dataclass
class Reply:
    status: int = 200
    body: Optional[dict] = None
    headers: dict = field(default_factory=dict)


class StubServer:
    """Routes ``POST <prefix>/chat/completions`` to a per-prefix handler.

    A handler receives the decoded request body and returns a :class:`Reply`.
    Every request is recorded as ``(prefix, body, auth header)``.
    """

    def __init__(self):
        self.handlers: dict[str, Callable[[dict], Reply]] = {}
        self.requests: list[tuple[str, dict, Optional[str]]] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))) or b"{}")
                prefix = self.path.removesuffix("/chat/completions")
                stub.requests.append((prefix, body, self.headers.get("Authorization")))
                handler = stub.handlers.get(prefix)
                reply = handler(body) if handler else Reply(404, {"error": "no route"})
                payload = json.dumps(reply.body or {}).encode()
                self.send_response(reply.status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                for k, v in reply.headers.items():
                    self.send_header(k, v)
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)

    @property
    def base(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def url(self, prefix: str) -> str:
        return self.base + prefix

    def __enter__(self) -> "StubServer":
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()


def sequence(*replies: Reply) -> Callable[[dict], Reply]:
    """Handler returning the given replies in order, repeating the last one."""
    queue = list(replies)

    def handle(body: dict) -> Reply:
        return queue.pop(0) if len(queue) > 1 else queue[0]

    return handle
