"""Minimal ``/v1/infer`` server that exposes any Backend over HTTP.

Useful for exercising :class:`HttpBackend` end to end, and as the shape a real
model wrapper should take. Images arrive as PNG, so fixture lookups behind
this server only match by content hash.
"""
from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..errors import CapabilityUnsupported, FixtureMiss, GroundingEmpty, PreconditionError, VlxError
from .base import Backend
from .http import INFER_PATH, decode_image

log = logging.getLogger(__name__)


def handle_request(backend: Backend, req: dict) -> tuple[int, dict]:
    task = req.get("task")
    try:
        if task == "embed":
            return 200, {"embedding": backend.embed_text(req.get("text") or "").tolist()}
        if "image" not in req:
            return 400, {"error": "missing image"}
        image = decode_image(req["image"])
        if task == "vqa":
            return 200, {"answer": backend.vqa_answer(image, req.get("text") or "")}
        if task == "itr":
            return 200, {"scores": backend.itr_scores(image, req.get("texts") or [])}
        if task == "vg":
            return 200, {"bbox": list(backend.ground_phrase(image, req.get("text") or "").as_tuple())}
        if task == "caption":
            return 200, {"caption": backend.caption_image(image)}
        return 400, {"error": f"unknown task {task!r}"}
    except (FixtureMiss, GroundingEmpty) as exc:
        return 404, {"error": str(exc)}
    except (CapabilityUnsupported, PreconditionError) as exc:
        return 400, {"error": str(exc)}
    except VlxError as exc:
        return 500, {"error": str(exc)}
    except Exception as exc:  # decode failures and the like
        return 400, {"error": f"bad request: {exc}"}


def make_handler(backend: Backend):
    class InferHandler(BaseHTTPRequestHandler):
        def do_POST(self):
            if self.path != INFER_PATH:
                self._reply(404, {"error": f"no route {self.path}"})
                return
            length = int(self.headers.get("Content-Length") or 0)
            try:
                req = json.loads(self.rfile.read(length) or b"{}")
            except ValueError:
                self._reply(400, {"error": "body is not JSON"})
                return
            status, body = handle_request(backend, req if isinstance(req, dict) else {})
            self._reply(status, body)

        def _reply(self, status: int, body: dict) -> None:
            payload = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, fmt, *args):
            log.debug(fmt, *args)

    return InferHandler


def serve(backend: Backend, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Start serving in a daemon thread; call ``shutdown()`` on the result to stop."""
    server = ThreadingHTTPServer((host, port), make_handler(backend))
    threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True).start()
    return server
