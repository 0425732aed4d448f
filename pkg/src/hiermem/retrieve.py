"""Hierarchical retrieval: route through session summaries, expand entity
anchors into triple candidates, rerank with temporally weighted relevance,
and assemble a structured context block.

The pipeline is deliberately decomposed into small stages (process_query,
select_sessions, gather_candidates, rerank, assemble_context) so each stage
can be exercised and cross-checked against a brute-force oracle in isolation.
"""

from __future__ import annotations

import calendar
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from .errors import ExtractionError, InvalidArgumentError
from .graph import GraphSnapshot
from .scoring import (
    ScoredCandidate,
    ScoringParams,
    TemporalContext,
    embedding_similarity,
    median_gap,
    rank_candidates,
    rank_sessions,
    relevance,
)
from .textkit import STOPWORDS, canonicalize, estimate_tokens, iso_ts, words

_MONTHS = {
    "january": 1, "jan": 1, "february": 2, "feb": 2, "march": 3, "mar": 3,
    "april": 4, "apr": 4, "may": 5, "june": 6, "jun": 6, "july": 7, "jul": 7,
    "august": 8, "aug": 8, "september": 9, "sep": 9, "sept": 9,
    "october": 10, "oct": 10, "november": 11, "nov": 11,
    "december": 12, "dec": 12,
}
_MONTH_YEAR_RE = re.compile(
    r"\b(" + "|".join(sorted(_MONTHS, key=len, reverse=True)) + r")\s+((?:19|20)\d{2})\b")
_YEAR_RE = re.compile(r"\b((?:19|20)\d{2})\b")


def parse_time_hint(text: str) -> tuple[str, int] | None:
    """Find an explicit period mention ("june 2023", "2021") in query text.

    Returns (hint_label, last_epoch_second_of_period) for the first match,
    or None. Month names without a year are too ambiguous to act on.
    """
    lowered = text.lower()
    m = _MONTH_YEAR_RE.search(lowered)
    if m:
        month, year = _MONTHS[m.group(1)], int(m.group(2))
        last_day = calendar.monthrange(year, month)[1]
        end = datetime(year, month, last_day, 23, 59, 59, tzinfo=timezone.utc)
        return f"{m.group(1)} {year}", int(end.timestamp())
    m = _YEAR_RE.search(lowered)
    if m:
        year = int(m.group(1))
        end = datetime(year, 12, 31, 23, 59, 59, tzinfo=timezone.utc)
        return m.group(1), int(end.timestamp())
    return None


@dataclass(frozen=True)
class RetrievalOptions:
    """Knobs for ablation runs; defaults give the full hierarchical pipeline."""

    entry_limit: int = 5
    flat_retrieval: bool = False
    raw_chunk_fallback: bool = False

    def __post_init__(self):
        if self.entry_limit < 1:
            raise InvalidArgumentError(f"entry_limit must be >= 1, got {self.entry_limit}")


@dataclass(frozen=True)
class Query:
    text: str
    ts: int | None = None
    top_k: int | None = None
    budget_tokens: int | None = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise InvalidArgumentError("query text must be non-empty")
        if self.top_k is not None and self.top_k < 1:
            raise InvalidArgumentError(f"top_k must be >= 1, got {self.top_k}")
        if self.budget_tokens is not None and self.budget_tokens < 1:
            raise InvalidArgumentError("budget_tokens must be >= 1")


@dataclass(frozen=True)
class QueryAnalysis:
    text: str
    query_ts: int
    entity_ids: tuple[str, ...]
    query_keys: frozenset[str]
    embedding: np.ndarray
    degraded: bool = False
    time_hint: str | None = None


@dataclass
class StructuredContext:
    """Renderable retrieval output: summaries, fact lines, source dialogue."""

    summaries: list[tuple[str, str]] = field(default_factory=list)
    facts: list[str] = field(default_factory=list)
    dialogue: list[tuple[str, str, int, str]] = field(default_factory=list)
    dropped_chunks: int = 0

    def render(self) -> str:
        lines = ["[SESSION SUMMARIES]"]
        lines.extend(f"- {sid}: {summary}" for sid, summary in self.summaries)
        lines.append("")
        lines.append("[FACTS]")
        lines.extend(self.facts)
        lines.append("")
        lines.append("[SOURCE DIALOGUE]")
        for chunk_id, sid, ts, text in self.dialogue:
            lines.append(f"({sid}, {iso_ts(ts)})")
            lines.append(text)
            lines.append("")
        while lines and lines[-1] == "":
            lines.pop()
        return "\n".join(lines)

    @property
    def token_estimate(self) -> int:
        return estimate_tokens(self.render())

    def to_dict(self) -> dict:
        return {
            "summaries": [{"session_id": s, "summary": t} for s, t in self.summaries],
            "facts": list(self.facts),
            "dialogue": [
                {"chunk_id": c, "session_id": s, "ts": ts, "text": t}
                for c, s, ts, t in self.dialogue
            ],
            "dropped_chunks": self.dropped_chunks,
            "text": self.render(),
            "token_estimate": self.token_estimate,
        }


@dataclass
class RetrievalResult:
    query: str
    query_ts: int
    degraded: bool
    time_hint: str | None
    entry_sessions: list[tuple[str, float]]
    candidates: list[ScoredCandidate]
    context: StructuredContext
    median_gap_s: float
    elapsed_ms: float = 0.0
    used_chunk_fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "query_ts": self.query_ts,
            "degraded": self.degraded,
            "time_hint": self.time_hint,
            "entry_sessions": [
                {"session_id": s, "score": sc} for s, sc in self.entry_sessions
            ],
            "median_gap_s": self.median_gap_s,
            "used_chunk_fallback": self.used_chunk_fallback,
            "candidates": [
                {
                    "triple_id": c.triple_id,
                    "session_score": c.session_score,
                    "triple_score": c.triple_score,
                    "semantic_score": c.semantic_score,
                    "age_seconds": c.age_seconds,
                    "time_weight": c.time_weight,
                    "relevance": c.relevance,
                    "ts": c.ts,
                }
                for c in self.candidates
            ],
            "context": self.context.to_dict(),
            "elapsed_ms": self.elapsed_ms,
        }


@dataclass(frozen=True)
class _RawCandidate:
    triple_id: str
    session_score: float
    triple_score: float
    ts: int


class Retriever:
    """Query-time reader over a committed graph snapshot."""

    def __init__(self, backend, params: ScoringParams | None = None,
                 options: RetrievalOptions | None = None):
        self.backend = backend
        self.params = params or ScoringParams()
        self.options = options or RetrievalOptions()

    # -- stage 1 ------------------------------------------------------------

    def process_query(self, query: Query, now_ts: int) -> QueryAnalysis:
        """Embed the query, pull entity anchors, resolve the effective timestamp.

        When the backend yields no entities (or fails outright) we degrade to
        stopword-filtered tokens so retrieval still has anchors to work with.
        """
        text = query.text.strip()
        degraded = False
        try:
            pairs = self.backend.extract_entities(text)
        except ExtractionError:
            pairs = []
        entity_ids = []
        for name, _etype in pairs:
            cid = canonicalize(name)
            if cid and cid not in entity_ids:
                entity_ids.append(cid)
        if not entity_ids:
            degraded = True
            for token in words(text):
                token = token.lower()
                if token not in STOPWORDS and len(token) >= 2 and token not in entity_ids:
                    entity_ids.append(token)

        hint = parse_time_hint(text)
        if query.ts is not None:
            query_ts = int(query.ts)
        elif hint is not None:
            query_ts = hint[1]
        else:
            query_ts = int(now_ts)

        keys = frozenset(
            t.lower() for t in words(text)
            if len(t) >= 2 and t.lower() not in STOPWORDS
        )
        return QueryAnalysis(
            text=text, query_ts=query_ts, entity_ids=tuple(entity_ids),
            query_keys=keys, embedding=self.backend.embed(text),
            degraded=degraded, time_hint=hint[0] if hint else None,
        )

    # -- stage 2 ------------------------------------------------------------

    def select_sessions(self, analysis: QueryAnalysis, snap: GraphSnapshot,
                        ) -> tuple[dict[str, float], list[tuple[str, float]]]:
        """Score every session against the query; pick the entry points.

        Returns (all_scores, entry_points). All scores are kept because a
        candidate triple may hang off a session that did not make the cut,
        and its session component is still that session's score.
        """
        ranked = rank_sessions(analysis.query_keys, analysis.embedding,
                               snap.sessions.values(), self.params.session_key_weight)
        return dict(ranked), ranked[: self.options.entry_limit]

    # -- stage 3 ------------------------------------------------------------

    def gather_candidates(self, analysis: QueryAnalysis, snap: GraphSnapshot,
                          session_scores: dict[str, float],
                          entry_sessions: list[tuple[str, float]],
                          ) -> list[_RawCandidate]:
        """Union of entity-anchored triples and the entry sessions' triples."""
        triple_ids: set[str] = set()
        if self.options.flat_retrieval:
            triple_ids.update(snap.triples.keys())
        else:
            for eid in analysis.entity_ids:
                triple_ids.update(t.triple_id for t in snap.neighbors(eid))
            for sid, _score in entry_sessions:
                triple_ids.update(snap.sessions[sid].triple_ids)

        out = []
        for tid in sorted(triple_ids):
            triple = snap.triples[tid]
            s_session = max(
                (session_scores.get(sid, 0.0) for sid in triple.session_ids),
                default=0.0)
            s_triple = embedding_similarity(analysis.embedding, triple.relation_embedding)
            out.append(_RawCandidate(tid, s_session, s_triple, triple.ts))
        return out

    # -- stage 4 ------------------------------------------------------------

    def rerank(self, analysis: QueryAnalysis, raw: list[_RawCandidate],
               top_k: int | None = None) -> tuple[list[ScoredCandidate], float]:
        """Temporally weighted rerank over the gathered candidate pool."""
        if not raw:
            return [], 1.0
        ages = [max(0.0, float(analysis.query_ts - c.ts)) for c in raw]
        tau = median_gap(ages)
        params = self.params
        if self.options.flat_retrieval and params.session_weight_enabled:
            params = replace(params, session_weight_enabled=False)
        temporal = TemporalContext(query_ts=analysis.query_ts, median_gap=tau)
        scored = [
            relevance(
                ScoredCandidate(triple_id=c.triple_id, session_score=c.session_score,
                                triple_score=c.triple_score, ts=c.ts),
                temporal, params)
            for c in raw
        ]
        k = top_k if top_k is not None else params.top_k
        return rank_candidates(scored, k), tau

    # -- stage 5 ------------------------------------------------------------

    def assemble_context(self, ranked: list[ScoredCandidate], snap: GraphSnapshot,
                         budget_tokens: int | None = None) -> StructuredContext:
        """Render ranked candidates into the fixed three-section context block.

        Chunk evidence is deduplicated and chronological; under a token
        budget, chunks belonging to the lowest-ranked triples are dropped
        first, and fact lines and summaries are never dropped.
        """
        ctx = StructuredContext()
        seen_sessions: set[str] = set()
        chunk_best_rank: dict[str, int] = {}

        for rank_i, cand in enumerate(ranked):
            triple = snap.triples[cand.triple_id]
            origin_chunk_id = min(triple.chunk_ids)
            origin_session = snap.chunks[origin_chunk_id].session_id
            subj = snap.entities[triple.subject_id].name
            obj = snap.entities[triple.object_id].name
            ctx.facts.append(
                f"- ({subj}, {triple.relation}, {obj})"
                f" -- {origin_session}, {iso_ts(triple.ts)}")
            for sid in sorted(triple.session_ids):
                if sid not in seen_sessions and sid in snap.sessions:
                    seen_sessions.add(sid)
                    node = snap.sessions[sid]
                    if node.summary:
                        ctx.summaries.append((sid, node.summary))
            for cid in triple.chunk_ids:
                if cid not in chunk_best_rank:
                    chunk_best_rank[cid] = rank_i

        if self.options.flat_retrieval:
            ctx.summaries = []

        kept = sorted(chunk_best_rank.items(), key=lambda kv: (kv[1], kv[0]))
        ctx.dialogue = self._chronological([cid for cid, _ in kept], snap)
        if budget_tokens is not None:
            self._apply_budget(ctx, kept, snap, budget_tokens)
        return ctx

    def _chronological(self, chunk_ids: list[str], snap: GraphSnapshot,
                       ) -> list[tuple[str, str, int, str]]:
        rows = []
        for cid in chunk_ids:
            chunk = snap.chunks[cid]
            rows.append((chunk.chunk_id, chunk.session_id, chunk.ts, chunk.text))
        rows.sort(key=lambda r: (r[2], r[0]))
        return rows

    def _apply_budget(self, ctx: StructuredContext,
                      kept: list[tuple[str, int]], snap: GraphSnapshot,
                      budget_tokens: int) -> None:
        # kept is already ordered best-rank-first; shed from the tail.
        while ctx.token_estimate > budget_tokens and kept:
            kept = kept[:-1]
            ctx.dropped_chunks += 1
            ctx.dialogue = self._chronological([cid for cid, _ in kept], snap)

    # -- full pipeline ------------------------------------------------------

    def retrieve(self, snap: GraphSnapshot, query: Query, now_ts: int,
                 ) -> RetrievalResult:
        import time as _time

        start = _time.perf_counter()
        analysis = self.process_query(query, now_ts)
        session_scores, entry = self.select_sessions(analysis, snap)
        raw = self.gather_candidates(analysis, snap, session_scores, entry)
        ranked, tau = self.rerank(analysis, raw, query.top_k)
        ctx = self.assemble_context(ranked, snap, query.budget_tokens)

        used_fallback = False
        if not ranked and self.options.raw_chunk_fallback:
            used_fallback = self._fill_chunk_fallback(ctx, entry, snap, query)

        return RetrievalResult(
            query=analysis.text, query_ts=analysis.query_ts,
            degraded=analysis.degraded, time_hint=analysis.time_hint,
            entry_sessions=entry, candidates=ranked, context=ctx,
            median_gap_s=tau,
            elapsed_ms=(_time.perf_counter() - start) * 1000.0,
            used_chunk_fallback=used_fallback,
        )

    def _fill_chunk_fallback(self, ctx: StructuredContext,
                             entry: list[tuple[str, float]], snap: GraphSnapshot,
                             query: Query) -> bool:
        """Last resort when no triple survived: surface recent raw dialogue."""
        chunk_ids: list[str] = []
        for sid, _score in entry:
            chunk_ids.extend(snap.sessions[sid].chunk_ids)
        if not chunk_ids:
            return False
        k = query.top_k if query.top_k is not None else self.params.top_k
        recent = sorted(chunk_ids, key=lambda cid: (snap.chunks[cid].ts, cid),
                        reverse=True)[:k]
        ctx.dialogue = self._chronological(recent, snap)
        for sid, _score in entry:
            node = snap.sessions[sid]
            if node.summary and all(s != sid for s, _ in ctx.summaries):
                ctx.summaries.append((sid, node.summary))
        return True
