"""Fixture-table backend for deterministic tests and offline demos.

Fixture file: a JSON array of ``{"image_id", "task", "text", "response"}``.
``image_id`` is a registered image tag or an ``ImageBuffer.content_hash``;
``task`` is a wire task name; ``text`` is the question / phrase / choice
(``null`` for captions). Lookups fold case and whitespace of the text and try
the image's keys from most to least specific, so an entry for ``door``
answers every noise variant ``door#v<i>`` that has no entry of its own.

Responses by task: ``vqa`` and ``caption`` take a string, ``itr`` one score
for that (image, choice) pair, ``vg`` ``[x_min, y_min, x_max, y_max]`` or
``null`` for no region, ``embed`` an explicit vector.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from ..errors import FixtureMiss, PreconditionError
from ..image import ImageBuffer
from ..text import normalize_answer, normalize_request_text
from .base import ALL_CAPABILITIES, Backend, Capability

DEFAULT_EMBED_DIM = 1024

_TASKS = {c.value for c in Capability}


def token_bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


def hash_embedding(text: str, dim: int = DEFAULT_EMBED_DIM) -> np.ndarray:
    """L2-normalized bag-of-tokens count vector. All-zero if ``text`` has no tokens."""
    vec = np.zeros(dim)
    for tok in normalize_answer(text):
        vec[token_bucket(tok, dim)] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def _key(image_id: str | None, task: str, text: str | None) -> tuple:
    return (image_id, task, normalize_request_text(text))


class MockBackend(Backend):
    def __init__(
        self,
        entries: Iterable[Mapping] = (),
        capabilities: Iterable[Capability] = ALL_CAPABILITIES,
        embed_dim: int = DEFAULT_EMBED_DIM,
    ):
        if embed_dim < 1:
            raise PreconditionError("embed_dim must be positive")
        table = {}
        for i, entry in enumerate(entries):
            task = entry.get("task")
            if task not in _TASKS:
                raise PreconditionError(f"fixture[{i}]: unknown task {task!r}")
            if "response" not in entry:
                raise PreconditionError(f"fixture[{i}]: missing response")
            key = _key(entry.get("image_id"), task, entry.get("text"))
            if key in table:
                raise PreconditionError(f"fixture[{i}]: duplicate entry {key}")
            table[key] = entry["response"]
        self._table = MappingProxyType(table)
        self.capabilities = frozenset(Capability(c) for c in capabilities)
        self.embed_dim = embed_dim
        self.fingerprint = f"mock-hash-bow/{embed_dim}"

    @classmethod
    def from_file(cls, path, **kwargs) -> "MockBackend":
        with open(Path(path), encoding="utf-8") as fh:
            entries = json.load(fh)
        if not isinstance(entries, list):
            raise PreconditionError(f"{path}: fixture file must hold a JSON array")
        return cls(entries, **kwargs)

    def __len__(self) -> int:
        return len(self._table)

    def _lookup(self, image: ImageBuffer | None, task: str, text: str | None):
        ids = image.lookup_keys() if image is not None else [None]
        for image_id in ids:
            key = _key(image_id, task, text)
            if key in self._table:
                return self._table[key]
        raise FixtureMiss(f"no fixture for task={task} image={ids[0]} text={text!r}")

    def _vqa(self, image, question):
        return str(self._lookup(image, "vqa", question))

    def _itr(self, image, choices):
        return [float(self._lookup(image, "itr", c)) for c in choices]

    def _ground(self, image, phrase):
        return self._lookup(image, "vg", phrase)

    def _caption(self, image):
        return str(self._lookup(image, "caption", None))

    def _embed(self, text):
        key = _key(None, "embed", text)
        if key in self._table:
            return self._table[key]
        return hash_embedding(text, self.embed_dim)
