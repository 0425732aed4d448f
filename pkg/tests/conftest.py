"""Shared fixtures: a small deterministic backend, a scriptable stub backend,
and embedding helpers used to build hand-controlled fixture graphs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from hiermem.backends.deterministic import DeterministicBackend
from hiermem.config import EngineConfig

REPO_ROOT = Path(__file__).resolve().parent.parent
TOY_DATASET = REPO_ROOT / "datasets" / "toy_dialogs.jsonl"


def basis(dim: int, axis: int) -> np.ndarray:
    """Unit basis vector e_axis."""
    vec = np.zeros(dim, dtype=np.float64)
    vec[axis] = 1.0
    vec.setflags(write=False)
    return vec


def unit(values) -> np.ndarray:
    """L2-normalize an arbitrary vector (must be nonzero)."""
    vec = np.asarray(values, dtype=np.float64)
    vec = vec / np.linalg.norm(vec)
    vec.setflags(write=False)
    return vec


def random_unit(np_rng: np.random.RandomState, dim: int) -> np.ndarray:
    return unit(np_rng.standard_normal(dim))


class CannedBackend:
    """A backend whose outputs the test scripts directly.

    ``vectors`` maps exact text to an embedding; anything else gets
    ``fallback``. Entity and triple extraction return fixed lists.
    """

    def __init__(self, dim: int = 8, vectors: dict | None = None,
                 fallback: np.ndarray | None = None,
                 entities: list | None = None, triples: list | None = None,
                 summary: tuple | None = None):
        self.dim = dim
        self.vectors = dict(vectors or {})
        self.fallback = fallback if fallback is not None else basis(dim, 0)
        self.entities = entities if entities is not None else []
        self.triples = triples if triples is not None else []
        self.summary = summary or ("recap of the session", frozenset({"recap"}))
        self.calls: list[tuple[str, str]] = []

    def embed(self, text: str) -> np.ndarray:
        self.calls.append(("embed", text))
        return self.vectors.get(text, self.fallback)

    def extract_entities(self, text: str):
        self.calls.append(("entities", text))
        return list(self.entities)

    def extract_triples(self, text: str):
        self.calls.append(("triples", text))
        return list(self.triples)

    def summarize(self, text: str, prior_summary=None, prior_keys=None):
        self.calls.append(("summarize", text))
        return self.summary


@pytest.fixture
def det_backend() -> DeterministicBackend:
    # dim 64 keeps vector math cheap without changing any behavior under test
    return DeterministicBackend(dim=64, seed=7)


@pytest.fixture
def engine_config(tmp_path) -> EngineConfig:
    config = EngineConfig()
    config.storage.data_dir = str(tmp_path / "data")
    config.backend.dim = 64
    config.backend.seed = 7
    return config


@pytest.fixture
def toy_dataset_path() -> Path:
    assert TOY_DATASET.exists(), f"bundled dataset missing: {TOY_DATASET}"
    return TOY_DATASET
