from .base import Backend, EmbeddingCache, ExtractedTriple
from .deterministic import DeterministicBackend, hash_embedding
from .remote import RemoteBackend

__all__ = [
    "Backend", "EmbeddingCache", "ExtractedTriple",
    "DeterministicBackend", "hash_embedding", "RemoteBackend",
]
