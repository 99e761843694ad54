"""JSONL result log: one ResultRecord object per line."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

RECORD_SCHEMA_VERSION = 1


def digest(inputs) -> str:
    blob = json.dumps(inputs, sort_keys=True, separators=(",", ":"), default=str)
    return "sha256:" + hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class ResultRecord:
    task_name: str
    timestamp: str
    inputs_digest: str
    result: dict
    answers: list | None = None

    @property
    def run_id(self) -> str:
        # derived, not random, so reruns with a pinned clock log identical bytes
        return hashlib.sha256(f"{self.task_name}|{self.inputs_digest}|{self.timestamp}".encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        out = {
            "schema_version": RECORD_SCHEMA_VERSION,
            "run_id": self.run_id,
            "task_name": self.task_name,
            "timestamp": self.timestamp,
            "inputs_digest": self.inputs_digest,
            "result": self.result,
        }
        if self.answers is not None:
            out["answers"] = self.answers
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def append_record(path, record: ResultRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(record.to_json() + "\n")


def read_records(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
