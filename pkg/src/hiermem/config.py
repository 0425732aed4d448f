"""Engine configuration: typed sections, strict parsing, JSON or YAML files.

Unknown keys are rejected with their dotted path rather than silently
ignored, because a typoed tuning knob that falls back to its default is the
kind of bug nobody notices until the numbers are wrong.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .ingest import DedupPolicy
from .retrieve import RetrievalOptions
from .scoring import ScoringParams


@dataclass
class BackendSettings:
    kind: str = "deterministic"
    dim: int = 256
    seed: int = 0
    max_summary_chars: int = 480
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "HIERMEM_API_KEY"
    timeout_ms: int = 30000
    max_concurrency: int = 4


@dataclass
class StorageSettings:
    data_dir: str = "./hiermem-data"
    snapshot_every: int = 500


@dataclass
class DedupSettings:
    similarity_threshold: float = 0.90
    require_type_match: bool = True
    require_same_entity_pair: bool = True


@dataclass
class RetrievalSettings:
    top_k: int = 15
    entry_limit: int = 5
    decay_shape: float = 0.5
    session_key_weight: float = 0.5
    decay_enabled: bool = True
    session_weight_enabled: bool = True
    flat_retrieval: bool = False
    raw_chunk_fallback: bool = False


@dataclass
class ServiceSettings:
    host: str = "127.0.0.1"
    port: int = 8300


_SECTIONS = {
    "backend": BackendSettings,
    "storage": StorageSettings,
    "dedup": DedupSettings,
    "retrieval": RetrievalSettings,
    "service": ServiceSettings,
}


def _coerce(value, type_name: str, path: str):
    """Strict scalar typing. bool is not an int here, ints promote to float."""
    if type_name == "bool":
        if isinstance(value, bool):
            return value
        raise ConfigError(path, f"expected a boolean, got {type(value).__name__}")
    if type_name == "int":
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(path, f"expected an integer, got {type(value).__name__}")
    if type_name == "float":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(path, f"expected a number, got {type(value).__name__}")
    if type_name == "str":
        if isinstance(value, str):
            return value
        raise ConfigError(path, f"expected a string, got {type(value).__name__}")
    raise ConfigError(path, f"unsupported field type {type_name!r}")


def _build_section(cls, payload, path: str):
    if not isinstance(payload, dict):
        raise ConfigError(path, "expected a mapping")
    known = {f.name: f for f in fields(cls)}
    for key in payload:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown key")
    kwargs = {
        name: _coerce(payload[name], spec.type, f"{path}.{name}")
        for name, spec in known.items()
        if name in payload
    }
    return cls(**kwargs)


@dataclass
class EngineConfig:
    backend: BackendSettings = field(default_factory=BackendSettings)
    storage: StorageSettings = field(default_factory=StorageSettings)
    dedup: DedupSettings = field(default_factory=DedupSettings)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    service: ServiceSettings = field(default_factory=ServiceSettings)

    @classmethod
    def from_dict(cls, payload: dict) -> "EngineConfig":
        if not isinstance(payload, dict):
            raise ConfigError("<root>", "expected a mapping at the top level")
        for key in payload:
            if key not in _SECTIONS:
                raise ConfigError(key, "unknown section")
        cfg = cls(**{
            name: _build_section(section_cls, payload.get(name, {}), name)
            for name, section_cls in _SECTIONS.items()
        })
        cfg.validate()
        return cfg

    def validate(self) -> None:
        b, s, d, r, v = self.backend, self.storage, self.dedup, self.retrieval, self.service
        if b.kind not in ("deterministic", "remote"):
            raise ConfigError("backend.kind", f"must be deterministic or remote, got {b.kind!r}")
        if b.dim < 8:
            raise ConfigError("backend.dim", f"must be >= 8, got {b.dim}")
        if b.max_summary_chars < 80:
            raise ConfigError("backend.max_summary_chars", f"must be >= 80, got {b.max_summary_chars}")
        if b.timeout_ms < 1:
            raise ConfigError("backend.timeout_ms", "must be positive")
        if b.max_concurrency < 1:
            raise ConfigError("backend.max_concurrency", "must be >= 1")
        if b.kind == "remote" and not b.endpoint:
            raise ConfigError("backend.endpoint", "required when backend.kind is remote")
        if b.kind == "remote" and not b.model:
            raise ConfigError("backend.model", "required when backend.kind is remote")
        if not s.data_dir:
            raise ConfigError("storage.data_dir", "must be non-empty")
        if s.snapshot_every < 1:
            raise ConfigError("storage.snapshot_every", f"must be >= 1, got {s.snapshot_every}")
        if not (0.0 < d.similarity_threshold <= 1.0):
            raise ConfigError("dedup.similarity_threshold",
                              f"must be in (0,1], got {d.similarity_threshold}")
        if r.top_k < 1:
            raise ConfigError("retrieval.top_k", f"must be >= 1, got {r.top_k}")
        if r.entry_limit < 1:
            raise ConfigError("retrieval.entry_limit", f"must be >= 1, got {r.entry_limit}")
        if not (0.0 < r.decay_shape < 1.0):
            raise ConfigError("retrieval.decay_shape",
                              f"must be in (0,1), got {r.decay_shape}")
        if not (0.0 <= r.session_key_weight <= 1.0):
            raise ConfigError("retrieval.session_key_weight",
                              f"must be in [0,1], got {r.session_key_weight}")
        if not (1 <= v.port <= 65535):
            raise ConfigError("service.port", f"must be in [1,65535], got {v.port}")

    # -- runtime object builders ---------------------------------------------

    def scoring_params(self) -> ScoringParams:
        r = self.retrieval
        return ScoringParams(
            decay_shape=r.decay_shape, top_k=r.top_k,
            session_key_weight=r.session_key_weight,
            decay_enabled=r.decay_enabled,
            session_weight_enabled=r.session_weight_enabled,
        )

    def retrieval_options(self) -> RetrievalOptions:
        r = self.retrieval
        return RetrievalOptions(
            entry_limit=r.entry_limit, flat_retrieval=r.flat_retrieval,
            raw_chunk_fallback=r.raw_chunk_fallback,
        )

    def dedup_policy(self) -> DedupPolicy:
        d = self.dedup
        return DedupPolicy(
            similarity_threshold=d.similarity_threshold,
            require_type_match=d.require_type_match,
            require_same_entity_pair=d.require_same_entity_pair,
        )

    def make_backend(self):
        b = self.backend
        if b.kind == "deterministic":
            from .backends.deterministic import DeterministicBackend

            return DeterministicBackend(dim=b.dim, seed=b.seed,
                                        max_summary_chars=b.max_summary_chars)
        from .backends.remote import RemoteBackend

        return RemoteBackend(endpoint=b.endpoint, model=b.model, dim=b.dim,
                             api_key_env=b.api_key_env, timeout_ms=b.timeout_ms,
                             max_concurrency=b.max_concurrency)

    def to_dict(self) -> dict:
        return {
            name: {f.name: getattr(getattr(self, name), f.name)
                   for f in fields(section_cls)}
            for name, section_cls in _SECTIONS.items()
        }


def load_config(path: str | Path) -> EngineConfig:
    """Read a JSON or YAML config file, dispatching on the extension."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc}") from exc
    suffix = path.suffix.lower()
    if suffix == ".json":
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    elif suffix in (".yaml", ".yml"):
        try:
            payload = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(str(path), f"invalid YAML: {exc}") from exc
        if payload is None:
            payload = {}
    else:
        raise ConfigError(str(path), f"unsupported config extension {suffix!r}")
    return EngineConfig.from_dict(payload)
