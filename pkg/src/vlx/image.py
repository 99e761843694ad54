"""Raster images as float RGB arrays in [0, 1].

An image may carry a ``tag``: a registered id that survives noise variation
(suffix ``#v<i>``) and cropping (suffix ``@x0,y0,x1,y1``). Fixture-driven
backends resolve requests through :meth:`ImageBuffer.lookup_keys`.
"""
from __future__ import annotations

import hashlib
import io
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import PreconditionError

_VARIANT_SUFFIX = re.compile(r"#v\d+$")


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    data: np.ndarray
    tag: str | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise PreconditionError(f"expected an HxWx3 array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise PreconditionError("image must be at least 1x1")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise PreconditionError("intensities must lie in [0, 1]")
        if arr is self.data and arr.flags.writeable:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def filled(cls, width: int, height: int, rgb=(0.5, 0.5, 0.5), tag=None) -> "ImageBuffer":
        data = np.empty((height, width, 3))
        data[...] = rgb
        return cls(data, tag=tag)

    @classmethod
    def from_uint8(cls, arr: np.ndarray, tag: str | None = None) -> "ImageBuffer":
        return cls(np.asarray(arr, dtype=np.float64) / 255.0, tag=tag)

    @classmethod
    def load(cls, path, tag: str | None = None) -> "ImageBuffer":
        """Decode a PNG or JPEG file. The tag defaults to the file stem."""
        path = Path(path)
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
        return cls.from_uint8(arr, tag=path.stem if tag is None else tag)

    @classmethod
    def from_png_bytes(cls, payload: bytes, tag: str | None = None) -> "ImageBuffer":
        with Image.open(io.BytesIO(payload)) as im:
            arr = np.asarray(im.convert("RGB"))
        return cls.from_uint8(arr, tag=tag)

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.data * 255.0).astype(np.uint8)

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.to_uint8()).save(buf, format="PNG")
        return buf.getvalue()

    def save(self, path) -> None:
        Image.fromarray(self.to_uint8()).save(path)

    @cached_property
    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.height}x{self.width}".encode())
        h.update(np.ascontiguousarray(self.data).tobytes())
        return "sha256:" + h.hexdigest()

    def lookup_keys(self) -> list[str]:
        """Candidate fixture keys, most specific first."""
        keys = []
        tag = self.tag
        while tag:
            keys.append(tag)
            stripped = _VARIANT_SUFFIX.sub("", tag)
            if stripped == tag:
                break
            tag = stripped
        keys.append(self.content_hash)
        return keys

    def equals(self, other: "ImageBuffer") -> bool:
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))
