"""Backend interface for the four model-dependent capabilities.

A backend supplies session summarization, entity extraction, triple
extraction, and text embedding. Two implementations ship: a deterministic
offline one (pure functions of input and seed, used by CI and property
tests) and a remote LLM client. Both must be safe for concurrent calls and
all embeddings from one instance share one dimension.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..errors import InvalidArgumentError


@dataclass(frozen=True)
class ExtractedTriple:
    """A raw subject-relation-object candidate before canonicalization."""

    subject: str
    relation: str
    object: str
    subject_type: str = "other"
    object_type: str = "other"

    def __post_init__(self):
        for part in (self.subject, self.relation, self.object):
            if not part.strip():
                raise InvalidArgumentError("triple parts must be non-empty")


class Backend(Protocol):
    dim: int

    def summarize(self, text: str, prior_summary: str | None = None,
                  prior_keys=None) -> tuple[str, frozenset[str]]: ...

    def extract_entities(self, text: str) -> list[tuple[str, str]]: ...

    def extract_triples(self, text: str) -> list[ExtractedTriple]: ...

    def embed(self, text: str) -> np.ndarray: ...


def require_text(text: str) -> str:
    if not text or not text.strip():
        raise InvalidArgumentError("text must be non-empty")
    return text


class EmbeddingCache:
    """Exact-text memoization, no eviction. Thread-safe."""

    def __init__(self):
        self._lock = threading.Lock()
        self._store: dict[str, np.ndarray] = {}

    def get_or_compute(self, text: str, compute) -> np.ndarray:
        with self._lock:
            hit = self._store.get(text)
        if hit is not None:
            return hit
        vec = compute(text)
        with self._lock:
            self._store.setdefault(text, vec)
        return vec
