"""Relevance math for retrieval: semantic fusion, temporal decay, ranking.

All functions are pure and deterministic. The final relevance of a candidate
triple is the harmonic mean of its session-level and triple-level similarity,
damped by a heavy-tailed (Weibull, shape 0<k<1) decay over its age. The decay
scale adapts per query: it is the median time gap across the candidate set.
Because the weight stays in (0,1], time modulates the semantic signal but
never zeroes it out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

DEFAULT_TOP_K = 15


@dataclass(frozen=True)
class ScoringParams:
    """Knobs for the ranking pipeline.

    decay_shape is the Weibull shape k, constrained to (0,1) so the decay is
    heavy-tailed. session_key_weight blends key overlap vs embedding cosine
    when scoring sessions. decay_enabled=False bypasses temporal weighting
    (ablation toggle); session_weight_enabled=False scores candidates on
    triple similarity alone.
    """

    decay_shape: float = 0.5
    top_k: int = DEFAULT_TOP_K
    session_key_weight: float = 0.5
    decay_enabled: bool = True
    session_weight_enabled: bool = True

    def __post_init__(self):
        if not (0.0 < self.decay_shape < 1.0):
            raise InvalidArgumentError(f"decay_shape must be in (0,1), got {self.decay_shape}")
        if self.top_k < 1:
            raise InvalidArgumentError(f"top_k must be >= 1, got {self.top_k}")
        if not (0.0 <= self.session_key_weight <= 1.0):
            raise InvalidArgumentError(
                f"session_key_weight must be in [0,1], got {self.session_key_weight}")


@dataclass(frozen=True)
class TemporalContext:
    """Per-query decay scale: the clamped median of candidate time gaps."""

    query_ts: int
    median_gap: float

    def __post_init__(self):
        if self.median_gap <= 0:
            raise InvalidArgumentError(f"median_gap must be > 0, got {self.median_gap}")


@dataclass
class ScoredCandidate:
    """One candidate triple with every component of its relevance score."""

    triple_id: str
    session_score: float
    triple_score: float
    ts: int
    age_seconds: float = 0.0
    semantic_score: float = 0.0
    time_weight: float = 1.0
    relevance: float = 0.0
    extras: dict = field(default_factory=dict)


def semantic_fusion(session_score: float, triple_score: float) -> float:
    """Harmonic mean of the two similarities; 0 when both are 0."""
    for name, v in (("session_score", session_score), ("triple_score", triple_score)):
        if not (0.0 <= v <= 1.0):
            raise InvalidArgumentError(f"{name} must be in [0,1], got {v}")
    total = session_score + triple_score
    if total == 0.0:
        return 0.0
    return 2.0 * session_score * triple_score / total


def temporal_weight(age_seconds: float, median_gap: float, decay_shape: float) -> float:
    """Weibull decay exp(-(age/median_gap)^k); 1.0 at age 0, never reaches 0."""
    if median_gap <= 0:
        raise InvalidArgumentError(f"median_gap must be > 0, got {median_gap}")
    if not (0.0 < decay_shape < 1.0):
        raise InvalidArgumentError(f"decay_shape must be in (0,1), got {decay_shape}")
    if age_seconds < 0:
        raise InvalidArgumentError(f"age_seconds must be >= 0, got {age_seconds}")
    return math.exp(-((age_seconds / median_gap) ** decay_shape))


def median_gap(gaps: list[float]) -> float:
    """Median of the time gaps, clamped to >= 1 second.

    Even-length lists use the arithmetic mean of the two middle values. The
    clamp keeps the decay well defined when every candidate shares the query
    timestamp.
    """
    if not gaps:
        raise InvalidArgumentError("gaps must be non-empty")
    ordered = sorted(gaps)
    n = len(ordered)
    if n % 2 == 1:
        mid = float(ordered[n // 2])
    else:
        mid = (ordered[n // 2 - 1] + ordered[n // 2]) / 2.0
    return max(1.0, mid)


def relevance(candidate: ScoredCandidate, ctx: TemporalContext,
              params: ScoringParams) -> ScoredCandidate:
    """Fill semantic_score, time_weight and relevance on the candidate."""
    age = max(0.0, float(ctx.query_ts - candidate.ts))
    candidate.age_seconds = age
    if params.session_weight_enabled:
        candidate.semantic_score = semantic_fusion(candidate.session_score,
                                                   candidate.triple_score)
    else:
        candidate.semantic_score = candidate.triple_score
    if params.decay_enabled:
        candidate.time_weight = temporal_weight(age, ctx.median_gap, params.decay_shape)
    else:
        candidate.time_weight = 1.0
    candidate.relevance = candidate.semantic_score * candidate.time_weight
    return candidate


def cosine_to_unit(cos: float) -> float:
    """Affine map of cosine similarity from [-1,1] to [0,1]."""
    return min(1.0, max(0.0, (cos + 1.0) / 2.0))


def embedding_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors, mapped to [0,1]."""
    return cosine_to_unit(float(np.dot(a, b)))


def key_overlap(query_keys: frozenset[str] | set[str], session_keys) -> float:
    """|query ∩ session| / max(1, |query|)."""
    if not query_keys:
        return 0.0
    return len(set(query_keys) & set(session_keys)) / max(1, len(query_keys))


def session_score(query_keys, query_embedding: np.ndarray | None, session,
                  key_weight: float) -> float:
    """Blend of key overlap and summary-embedding similarity, in [0,1]."""
    overlap = key_overlap(query_keys, session.keys)
    if query_embedding is None or session.summary_embedding is None:
        sim = 0.0
    else:
        sim = embedding_similarity(query_embedding, session.summary_embedding)
    return key_weight * overlap + (1.0 - key_weight) * sim


def rank_sessions(query_keys, query_embedding, sessions, key_weight: float
                  ) -> list[tuple[str, float]]:
    """All sessions scored and ordered: score desc, last_ts desc, id asc."""
    if not (0.0 <= key_weight <= 1.0):
        raise InvalidArgumentError(f"key_weight must be in [0,1], got {key_weight}")
    scored = [
        (s.session_id, session_score(query_keys, query_embedding, s, key_weight), s.last_ts)
        for s in sessions
    ]
    scored.sort(key=lambda row: (-row[1], -row[2], row[0]))
    return [(sid, score) for sid, score, _ in scored]


def rank_candidates(candidates: list[ScoredCandidate], top_k: int
                    ) -> list[ScoredCandidate]:
    """Order by relevance desc, ts desc, triple_id asc; keep the top_k."""
    ordered = sorted(candidates, key=lambda c: (-c.relevance, -c.ts, c.triple_id))
    return ordered[:top_k]
