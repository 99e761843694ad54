"""Caption-difference anomaly patrol.

A store is one directory::

    waypoints.json        index of live baselines
    images/<sha256>.png   baseline images, content addressed
    reports.jsonl         one AnomalyReport per line
    audit.jsonl           one line per baseline (re)recording

Single writer; any number of readers.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .backend.base import Backend, EmbeddingVector
from .errors import EmbeddingSpaceMismatch, PreconditionError, StoreWriteError, UnknownWaypoint, VlxError
from .extractors import DEFAULT_DIC_THRESHOLD, check_threshold, cosine_similarity
from .image import ImageBuffer
from .variation import NoiseConfig, rgb_shift

STORE_SCHEMA_VERSION = 1


def timestamp(now: datetime | None = None) -> str:
    now = now or datetime.now(timezone.utc)
    return now.isoformat()


@dataclass(frozen=True)
class Waypoint:
    id: str
    label: str
    baseline_image_ref: str
    baseline_caption: str
    baseline_embedding: EmbeddingVector
    recorded_at: str
    backend_fingerprint: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "baseline_image_ref": self.baseline_image_ref,
            "baseline_caption": self.baseline_caption,
            "baseline_embedding": self.baseline_embedding.tolist(),
            "recorded_at": self.recorded_at,
            "backend_fingerprint": self.backend_fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Waypoint":
        return cls(
            id=d["id"],
            label=d.get("label", ""),
            baseline_image_ref=d["baseline_image_ref"],
            baseline_caption=d["baseline_caption"],
            baseline_embedding=EmbeddingVector(d["baseline_embedding"]),
            recorded_at=d["recorded_at"],
            backend_fingerprint=d.get("backend_fingerprint", "unknown"),
        )


@dataclass(frozen=True)
class AnomalyReport:
    waypoint_id: str
    similarity: float
    anomalous: bool
    baseline_caption: str
    current_caption: str
    threshold: float
    checked_at: str
    similarity_std: float | None = None
    n_variants: int = 1

    def to_dict(self) -> dict:
        out = {
            "waypoint_id": self.waypoint_id,
            "similarity": self.similarity,
            "anomalous": self.anomalous,
            "baseline_caption": self.baseline_caption,
            "current_caption": self.current_caption,
            "threshold": self.threshold,
            "checked_at": self.checked_at,
        }
        if self.similarity_std is not None:
            out["similarity_std"] = self.similarity_std
            out["n_variants"] = self.n_variants
        return out


@dataclass(frozen=True)
class PatrolError:
    """Stands in for the report of a waypoint that could not be checked."""

    waypoint_id: str
    error: str
    detail: str

    def to_dict(self) -> dict:
        return {"waypoint_id": self.waypoint_id, "error": self.error, "detail": self.detail}


def _write_atomic(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


class WaypointStore:
    def __init__(self, root):
        self.root = Path(root)

    @property
    def index_path(self) -> Path:
        return self.root / "waypoints.json"

    @property
    def reports_path(self) -> Path:
        return self.root / "reports.jsonl"

    @property
    def audit_path(self) -> Path:
        return self.root / "audit.jsonl"

    def _load_index(self) -> dict:
        if not self.index_path.exists():
            return {}
        with open(self.index_path, encoding="utf-8") as fh:
            return json.load(fh).get("waypoints", {})

    def get(self, waypoint_id: str) -> Waypoint:
        index = self._load_index()
        if waypoint_id not in index:
            raise UnknownWaypoint(f"no baseline recorded for waypoint {waypoint_id!r}")
        return Waypoint.from_dict(index[waypoint_id])

    def __contains__(self, waypoint_id: str) -> bool:
        return waypoint_id in self._load_index()

    def ids(self) -> list[str]:
        return sorted(self._load_index())

    def baseline_image(self, waypoint_id: str) -> ImageBuffer:
        wp = self.get(waypoint_id)
        return ImageBuffer.load(self.root / wp.baseline_image_ref, tag=waypoint_id)

    def audit_log(self, waypoint_id: str | None = None) -> list[dict]:
        return [e for e in self._read_jsonl(self.audit_path) if waypoint_id is None or e["waypoint_id"] == waypoint_id]

    def reports(self) -> list[dict]:
        return self._read_jsonl(self.reports_path)

    @staticmethod
    def _read_jsonl(path: Path) -> list[dict]:
        if not path.exists():
            return []
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def put(self, waypoint: Waypoint, image_png: bytes) -> None:
        try:
            (self.root / "images").mkdir(parents=True, exist_ok=True)
            img_path = self.root / waypoint.baseline_image_ref
            if not img_path.exists():
                _write_atomic(img_path, image_png)
            index = self._load_index()
            previous = index.get(waypoint.id)
            index[waypoint.id] = waypoint.to_dict()
            doc = {"schema_version": STORE_SCHEMA_VERSION, "waypoints": index}
            _write_atomic(self.index_path, json.dumps(doc, indent=2, sort_keys=True).encode())
            self._append(
                self.audit_path,
                {
                    "waypoint_id": waypoint.id,
                    "action": "overwrite" if previous else "record",
                    "recorded_at": waypoint.recorded_at,
                    "baseline_image_ref": waypoint.baseline_image_ref,
                    "previous_image_ref": previous["baseline_image_ref"] if previous else None,
                },
            )
        except OSError as exc:
            raise StoreWriteError(f"cannot write store at {self.root}: {exc}") from exc

    def append_report(self, report: AnomalyReport) -> None:
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            self._append(self.reports_path, report.to_dict())
        except OSError as exc:
            raise StoreWriteError(f"cannot write store at {self.root}: {exc}") from exc

    @staticmethod
    def _append(path: Path, record: dict) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def record_baseline(
    store: WaypointStore,
    backend: Backend,
    waypoint_id: str,
    image: ImageBuffer,
    label: str = "",
    now: datetime | None = None,
) -> Waypoint:
    if not waypoint_id:
        raise PreconditionError("waypoint id must be non-empty")
    caption = backend.caption_image(image)
    embedding = backend.embed_text(caption)
    png = image.to_png_bytes()
    ref = f"images/{hashlib.sha256(png).hexdigest()}.png"
    wp = Waypoint(waypoint_id, label, ref, caption, embedding, timestamp(now), backend.fingerprint)
    store.put(wp, png)
    return wp


def check_waypoint(
    store: WaypointStore,
    backend: Backend,
    waypoint_id: str,
    image: ImageBuffer,
    threshold: float = DEFAULT_DIC_THRESHOLD,
    now: datetime | None = None,
    ensemble: NoiseConfig | None = None,
) -> AnomalyReport:
    """Compare a fresh caption against the stored baseline embedding.

    The baseline is never re-captioned. With ``ensemble`` the current image is
    captioned once per channel-shift variant and the mean similarity decides.
    """
    threshold = check_threshold(threshold)
    wp = store.get(waypoint_id)
    if wp.backend_fingerprint != backend.fingerprint:
        raise EmbeddingSpaceMismatch(
            f"baseline for {waypoint_id!r} was embedded by {wp.backend_fingerprint}, not {backend.fingerprint}"
        )
    images = [image] if ensemble is None else [rgb_shift(image, ensemble, i) for i in range(ensemble.n_variants)]
    captions, sims = [], []
    for im in images:
        cap = backend.caption_image(im)
        captions.append(cap)
        sims.append(cosine_similarity(wp.baseline_embedding, backend.embed_text(cap)))
    sim = float(np.mean(sims)) if ensemble is not None else sims[0]
    report = AnomalyReport(
        waypoint_id=waypoint_id,
        similarity=sim,
        anomalous=sim < threshold,
        baseline_caption=wp.baseline_caption,
        current_caption=captions[0],
        threshold=threshold,
        checked_at=timestamp(now),
        similarity_std=float(np.std(sims)) if ensemble is not None else None,
        n_variants=len(images),
    )
    store.append_report(report)
    return report


def patrol(
    store: WaypointStore,
    backend: Backend,
    route: Iterable[tuple[str, ImageBuffer]],
    threshold: float = DEFAULT_DIC_THRESHOLD,
    now: datetime | None = None,
    ensemble: NoiseConfig | None = None,
) -> list[AnomalyReport | PatrolError]:
    """Check each stop in order. A failing stop yields a PatrolError entry and the route continues."""
    threshold = check_threshold(threshold)
    out: list[AnomalyReport | PatrolError] = []
    for waypoint_id, image in route:
        try:
            out.append(check_waypoint(store, backend, waypoint_id, image, threshold, now, ensemble))
        except VlxError as exc:
            out.append(PatrolError(waypoint_id, exc.code, str(exc)))
    return out


def summarize(entries: Sequence[AnomalyReport | PatrolError]) -> dict:
    reports = [e for e in entries if isinstance(e, AnomalyReport)]
    return {
        "stops": len(entries),
        "anomalous": sum(r.anomalous for r in reports),
        "errors": len(entries) - len(reports),
    }
