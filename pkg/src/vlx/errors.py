"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the CLI prints in
its ``{"error": ...}`` payload.
"""
from __future__ import annotations


class VlxError(Exception):
    code = "error"


class PreconditionError(VlxError, ValueError):
    code = "precondition"


class CapabilityUnsupported(VlxError):
    code = "capability_unsupported"


class BackendUnavailable(VlxError):
    code = "backend_unavailable"


class BackendError(VlxError):
    """The model server answered, but with an error payload."""

    code = "backend_error"


class FixtureMiss(VlxError, KeyError):
    code = "fixture_miss"

    def __str__(self) -> str:  # KeyError repr-quotes its message otherwise
        return Exception.__str__(self)


class GroundingEmpty(VlxError):
    code = "grounding_empty"


class MalformedTemplate(PreconditionError):
    code = "malformed_template"


class ZeroVector(VlxError, ValueError):
    code = "zero_vector"


class DimensionMismatch(VlxError, ValueError):
    code = "dimension_mismatch"


class EmptyInput(VlxError, ValueError):
    code = "empty_input"


class UnknownWaypoint(VlxError, KeyError):
    code = "unknown_waypoint"

    def __str__(self) -> str:
        return Exception.__str__(self)


class EmbeddingSpaceMismatch(VlxError):
    code = "embedding_space_mismatch"


class StoreWriteError(VlxError, OSError):
    code = "store_write_error"


class ConfigError(VlxError):
    """Config rejected. ``issues`` holds ``(field_path, message)`` pairs."""

    code = "config_error"

    def __init__(self, issues: list[tuple[str, str]]):
        self.issues = list(issues)
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in self.issues))
