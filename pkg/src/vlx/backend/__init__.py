from .base import (
    ALL_CAPABILITIES,
    Backend,
    Capability,
    CountingBackend,
    EmbeddingVector,
    GroundingBox,
    clamp_box,
)
from .http import HttpBackend
from .mock import MockBackend, hash_embedding

__all__ = [
    "ALL_CAPABILITIES",
    "Backend",
    "Capability",
    "CountingBackend",
    "EmbeddingVector",
    "GroundingBox",
    "HttpBackend",
    "MockBackend",
    "clamp_box",
    "hash_embedding",
]
