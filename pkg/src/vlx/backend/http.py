"""Client for an external model server speaking the ``/v1/infer`` JSON protocol.

Request: ``{"task": "vqa"|"itr"|"vg"|"caption"|"embed", "image": <base64 PNG>,
"text": str, "texts": [str]}``. Response: one of ``{"answer"}``, ``{"scores"}``,
``{"bbox"}``, ``{"caption"}``, ``{"embedding"}``, or ``{"error"}`` with a 4xx/5xx
status.
"""
from __future__ import annotations

import base64
import logging
import time
from typing import Callable, Iterable

import requests

from ..errors import BackendError, BackendUnavailable
from ..image import ImageBuffer
from .base import ALL_CAPABILITIES, Backend, Capability

log = logging.getLogger(__name__)

INFER_PATH = "/v1/infer"
RETRYABLE_STATUS = frozenset({502, 503, 504})


def encode_image(image: ImageBuffer) -> str:
    return base64.b64encode(image.to_png_bytes()).decode("ascii")


def decode_image(payload: str) -> ImageBuffer:
    return ImageBuffer.from_png_bytes(base64.b64decode(payload))


class HttpBackend(Backend):
    """Transport failures are retried ``max_retries`` times, ``backoff`` seconds
    apart, then surface as BackendUnavailable. Safe for concurrent use: no
    state is shared between requests.
    """

    def __init__(
        self,
        endpoint: str,
        capabilities: Iterable[Capability] = ALL_CAPABILITIES,
        timeout: float = 30.0,
        max_retries: int = 2,
        backoff: float = 0.5,
        fingerprint: str | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        endpoint = endpoint.rstrip("/")
        self.url = endpoint if endpoint.endswith(INFER_PATH) else endpoint + INFER_PATH
        self.capabilities = frozenset(Capability(c) for c in capabilities)
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.fingerprint = fingerprint or f"http:{self.url}"
        self._sleep = sleep

    def post(self, payload: dict) -> dict:
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff)
            try:
                resp = requests.post(self.url, json=payload, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                log.warning("attempt %d to %s failed: %s", attempt + 1, self.url, exc)
                last_exc = exc
                continue
            if resp.status_code in RETRYABLE_STATUS:
                log.warning("attempt %d to %s got HTTP %d", attempt + 1, self.url, resp.status_code)
                last_exc = BackendError(f"HTTP {resp.status_code}")
                continue
            try:
                body = resp.json()
            except ValueError as exc:
                raise BackendError(f"non-JSON response (HTTP {resp.status_code})") from exc
            if resp.status_code >= 400 or "error" in body:
                raise BackendError(f"HTTP {resp.status_code}: {body.get('error', body)}")
            return body
        raise BackendUnavailable(f"{self.url} unreachable after {self.max_retries + 1} attempts: {last_exc}")

    def _field(self, body: dict, name: str):
        if name not in body:
            raise BackendError(f"response lacks {name!r}: {sorted(body)}")
        return body[name]

    def _vqa(self, image, question):
        body = self.post({"task": "vqa", "image": encode_image(image), "text": question})
        return str(self._field(body, "answer"))

    def _itr(self, image, choices):
        body = self.post({"task": "itr", "image": encode_image(image), "texts": list(choices)})
        return self._field(body, "scores")

    def _ground(self, image, phrase):
        body = self.post({"task": "vg", "image": encode_image(image), "text": phrase})
        return self._field(body, "bbox")

    def _caption(self, image):
        body = self.post({"task": "caption", "image": encode_image(image)})
        return str(self._field(body, "caption"))

    def _embed(self, text):
        body = self.post({"task": "embed", "text": text})
        return self._field(body, "embedding")
