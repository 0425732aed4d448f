"""hiermem: a hierarchical, real-time memory engine for dialogue agents.

Conversations are indexed on three cross-linked layers: session summaries on
top, entity-relation triples in the middle, verbatim dialogue chunks at the
bottom. Ingestion is incremental and crash-safe; retrieval routes through
the hierarchy and reranks candidates with temporally weighted relevance.
"""

from .backends import Backend, DeterministicBackend, ExtractedTriple, RemoteBackend
from .config import EngineConfig, load_config
from .engine import MemoryEngine
from .errors import (
    BackendError,
    ConfigError,
    CorruptLogError,
    ExtractionError,
    HierMemError,
    InvalidArgumentError,
    NotFoundError,
    PersistenceError,
)
from .graph import Chunk, EntityNode, GraphSnapshot, MemoryGraph, SessionNode, Triple
from .ingest import DedupPolicy, IngestReport, IngestRequest
from .retrieve import Query, RetrievalOptions, RetrievalResult, StructuredContext
from .scoring import ScoringParams

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BackendError",
    "Chunk",
    "ConfigError",
    "CorruptLogError",
    "DedupPolicy",
    "DeterministicBackend",
    "EngineConfig",
    "EntityNode",
    "ExtractedTriple",
    "ExtractionError",
    "GraphSnapshot",
    "HierMemError",
    "IngestReport",
    "IngestRequest",
    "InvalidArgumentError",
    "MemoryEngine",
    "MemoryGraph",
    "NotFoundError",
    "PersistenceError",
    "Query",
    "RemoteBackend",
    "RetrievalOptions",
    "RetrievalResult",
    "ScoringParams",
    "SessionNode",
    "StructuredContext",
    "Triple",
    "__version__",
    "load_config",
]
