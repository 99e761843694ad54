from __future__ import annotations

import math
import threading
from abc import ABC
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from ..errors import BackendError, CapabilityUnsupported, GroundingEmpty, PreconditionError
from ..image import ImageBuffer


class Capability(str, Enum):
    """What a backend can do. Values double as the wire-protocol task names."""

    VQA = "vqa"
    ITR_SCORES = "itr"
    VG = "vg"
    CAPTION = "caption"
    EMBED_TEXT = "embed"


ALL_CAPABILITIES = frozenset(Capability)


@dataclass(frozen=True)
class GroundingBox:
    """Pixel rectangle; ``x_max`` and ``y_max`` are exclusive."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    source_phrase: str = ""

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def fits(self, width: int, height: int) -> bool:
        return 0 <= self.x_min < self.x_max <= width and 0 <= self.y_min < self.y_max <= height

    def offset(self, dx: int, dy: int) -> "GroundingBox":
        return GroundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy, self.source_phrase)

    def to_dict(self) -> dict:
        return {"bbox": list(self.as_tuple()), "phrase": self.source_phrase}


def clamp_box(raw: Sequence[float], width: int, height: int, phrase: str = "") -> GroundingBox:
    """Round a raw backend box to pixels and clamp it into the image.

    Raises GroundingEmpty when nothing is left after clamping.
    """
    if raw is None or len(raw) != 4:
        raise GroundingEmpty(f"no region returned for {phrase!r}")
    try:
        x0, y0, x1, y1 = (int(round(float(v))) for v in raw)
    except (TypeError, ValueError, OverflowError) as exc:
        raise GroundingEmpty(f"unusable region {raw!r} for {phrase!r}") from exc
    x0, x1 = min(max(x0, 0), width), min(max(x1, 0), width)
    y0, y1 = min(max(y0, 0), height), min(max(y1, 0), height)
    if x0 >= x1 or y0 >= y1:
        raise GroundingEmpty(f"degenerate region {tuple(raw)} for {phrase!r}")
    return GroundingBox(x0, y0, x1, y1, phrase)


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise PreconditionError("embedding must have dimension > 0")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dimension(self) -> int:
        return self.values.size

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def tolist(self) -> list[float]:
        return [float(v) for v in self.values]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))


class Backend(ABC):
    """Capability-checked access to a vision-language model.

    Subclasses implement the ``_vqa``/``_itr``/``_ground``/``_caption``/``_embed``
    hooks for the capabilities they declare. The public methods enforce
    preconditions and output contracts; they never rewrite answers, scores or
    captions, and only clamp grounding boxes.
    """

    capabilities: frozenset = frozenset()
    fingerprint: str = "unknown"

    def supports(self, capability: Capability) -> bool:
        return capability in self.capabilities

    def _require(self, capability: Capability) -> None:
        if capability not in self.capabilities:
            raise CapabilityUnsupported(f"{type(self).__name__} does not support {capability.value}")

    def vqa_answer(self, image: ImageBuffer, question: str) -> str:
        self._require(Capability.VQA)
        if not question or not question.strip():
            raise PreconditionError("question must be non-empty")
        return self._vqa(image, question)

    def itr_scores(self, image: ImageBuffer, choices: Sequence[str]) -> list[float]:
        self._require(Capability.ITR_SCORES)
        choices = list(choices)
        if not choices:
            raise PreconditionError("choices must be non-empty")
        scores = [float(s) for s in self._itr(image, choices)]
        if len(scores) != len(choices):
            raise BackendError(f"got {len(scores)} scores for {len(choices)} choices")
        if not all(math.isfinite(s) for s in scores):
            raise BackendError("non-finite retrieval score")
        return scores

    def ground_phrase(self, image: ImageBuffer, phrase: str) -> GroundingBox:
        self._require(Capability.VG)
        if not phrase or not phrase.strip():
            raise PreconditionError("phrase must be non-empty")
        return clamp_box(self._ground(image, phrase), image.width, image.height, phrase)

    def caption_image(self, image: ImageBuffer) -> str:
        self._require(Capability.CAPTION)
        caption = self._caption(image)
        if not caption:
            raise BackendError("backend returned an empty caption")
        return caption

    def embed_text(self, text: str) -> EmbeddingVector:
        self._require(Capability.EMBED_TEXT)
        if not text or not text.strip():
            raise PreconditionError("text must be non-empty")
        vec = EmbeddingVector(self._embed(text))
        if not np.all(np.isfinite(vec.values)) or vec.norm == 0.0:
            raise BackendError(f"backend returned a degenerate embedding for {text!r}")
        return vec

    def _vqa(self, image: ImageBuffer, question: str) -> str:
        raise NotImplementedError

    def _itr(self, image: ImageBuffer, choices: list[str]) -> Sequence[float]:
        raise NotImplementedError

    def _ground(self, image: ImageBuffer, phrase: str) -> Sequence[float] | None:
        raise NotImplementedError

    def _caption(self, image: ImageBuffer) -> str:
        raise NotImplementedError

    def _embed(self, text: str) -> Sequence[float]:
        raise NotImplementedError

    def __repr__(self) -> str:
        caps = ",".join(sorted(c.value for c in self.capabilities))
        return f"{type(self).__name__}({caps})"


class CountingBackend(Backend):
    """Wraps another backend and counts calls per capability (thread-safe)."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.capabilities = inner.capabilities
        self.fingerprint = inner.fingerprint
        self.calls: Counter = Counter()
        self._lock = threading.Lock()

    def _count(self, capability: Capability) -> None:
        with self._lock:
            self.calls[capability] += 1

    def vqa_answer(self, image, question):
        self._count(Capability.VQA)
        return self.inner.vqa_answer(image, question)

    def itr_scores(self, image, choices):
        self._count(Capability.ITR_SCORES)
        return self.inner.itr_scores(image, choices)

    def ground_phrase(self, image, phrase):
        self._count(Capability.VG)
        return self.inner.ground_phrase(image, phrase)

    def caption_image(self, image):
        self._count(Capability.CAPTION)
        return self.inner.caption_image(image)

    def embed_text(self, text):
        self._count(Capability.EMBED_TEXT)
        return self.inner.embed_text(text)

    @property
    def total(self) -> int:
        return sum(self.calls.values())
