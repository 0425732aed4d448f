"""Real-time ingestion: per dialogue chunk, refresh the session summary,
extract triples, deduplicate against the graph, and commit atomically.

One chunk is one graph transaction and one persisted event batch; a backend
failure aborts the whole chunk so replay stays deterministic. Duplicate
triples are never re-created: their source session/chunk is attached to the
existing node as an extra hyperlink, which keeps the graph compact while
hyperlink counts keep growing.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, replace

import numpy as np

from .backends.base import ExtractedTriple
from .errors import InvalidArgumentError
from .graph import GraphTxn, MemoryGraph, triple_sentence
from .textkit import canonicalize, estimate_tokens, parse_ts, render_turns


@dataclass(frozen=True)
class DedupPolicy:
    """Type-aware, entity-pair-gated duplicate detection with threshold theta."""

    similarity_threshold: float = 0.90
    require_type_match: bool = True
    require_same_entity_pair: bool = True

    def __post_init__(self):
        if not (0.0 < self.similarity_threshold <= 1.0):
            raise InvalidArgumentError(
                f"similarity_threshold must be in (0,1], got {self.similarity_threshold}")


@dataclass(frozen=True)
class IngestRequest:
    session_id: str
    speaker_turns: tuple[tuple[str, str], ...]
    ts: int
    idempotency_key: str | None = None

    @classmethod
    def from_dict(cls, payload: dict) -> "IngestRequest":
        if not isinstance(payload, dict):
            raise InvalidArgumentError("request body must be a JSON object")
        session_id = payload.get("session_id")
        if not session_id or not isinstance(session_id, str):
            raise InvalidArgumentError("session_id: required non-empty string")
        raw_turns = payload.get("turns") or payload.get("speaker_turns")
        if not raw_turns or not isinstance(raw_turns, list):
            raise InvalidArgumentError("turns: required non-empty list")
        turns = []
        for i, turn in enumerate(raw_turns):
            if not isinstance(turn, dict) or not turn.get("speaker") or "text" not in turn:
                raise InvalidArgumentError(f"turns[{i}]: expected {{speaker, text}}")
            turns.append((str(turn["speaker"]), str(turn["text"])))
        if "ts" not in payload:
            raise InvalidArgumentError("ts: required")
        try:
            ts = parse_ts(payload["ts"])
        except InvalidArgumentError as exc:
            raise InvalidArgumentError(f"ts: {exc}") from None
        key = payload.get("idempotency_key")
        if key is not None and not isinstance(key, str):
            raise InvalidArgumentError("idempotency_key: must be a string")
        return cls(session_id, tuple(turns), ts, key)


@dataclass
class IngestReport:
    chunk_id: str
    session_created: bool
    triples_added: int
    triples_merged: int
    summary_updated: bool
    elapsed_ms: float
    tokens_estimate: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class TripleCandidate:
    """A canonicalized extracted triple plus its sentence embedding."""

    subject: str
    relation: str
    object: str
    subject_type: str
    object_type: str
    subject_id: str
    object_id: str
    embedding: np.ndarray


def canonicalize_candidates(extracted: list[ExtractedTriple], embed) -> list[TripleCandidate]:
    """Canonicalize parts and embed the canonical triple sentence.

    Triples whose subject, relation, or object vanish under canonicalization
    are dropped before counting, so added + merged always equals the size of
    the returned list.
    """
    out = []
    for raw in extracted:
        subject_id = canonicalize(raw.subject)
        object_id = canonicalize(raw.object)
        relation = canonicalize(raw.relation)
        if not subject_id or not object_id or not relation:
            continue
        sentence = triple_sentence(raw.subject, relation, raw.object)
        out.append(TripleCandidate(
            subject=raw.subject.strip(), relation=relation, object=raw.object.strip(),
            subject_type=raw.subject_type, object_type=raw.object_type,
            subject_id=subject_id, object_id=object_id,
            embedding=embed(sentence),
        ))
    return out


def find_duplicate(candidate: TripleCandidate, policy: DedupPolicy, view) -> str | None:
    """Best duplicate of the candidate in ``view``, or None.

    ``view`` is any object with ``triples``, ``entities`` and ``pair_triples``
    mappings (a GraphSnapshot or an in-flight transaction). The search is
    restricted to triples over the same entity pair (and matching entity
    types) when the policy says so; the winner is the highest-cosine match at
    or above the threshold, ties broken by ascending triple id.
    """
    if policy.require_same_entity_pair:
        bucket = view.pair_triples.get((candidate.subject_id, candidate.object_id), ())
    else:
        bucket = tuple(view.triples.keys())
    best_id, best_cos = None, -2.0
    for triple_id in bucket:
        triple = view.triples[triple_id]
        if policy.require_type_match:
            if view.entities[triple.subject_id].entity_type != candidate.subject_type:
                continue
            if view.entities[triple.object_id].entity_type != candidate.object_type:
                continue
        cos = float(np.dot(candidate.embedding, triple.relation_embedding))
        if cos > best_cos or (cos == best_cos and best_id is not None and triple_id < best_id):
            best_id, best_cos = triple_id, cos
    if best_id is not None and best_cos >= policy.similarity_threshold:
        return best_id
    return None


def integrate_triples(txn: GraphTxn, candidates: list[TripleCandidate],
                      chunk_id: str, session_id: str, ts: int,
                      policy: DedupPolicy) -> tuple[int, int, list[dict]]:
    """Insert novel candidates, hyperlink duplicates. Returns (added, merged, ops).

    Dedup runs against the transaction's staged state, so duplicates within
    one batch collapse onto the first occurrence exactly like graph-level
    duplicates do.
    """
    added = merged = 0
    ops: list[dict] = []
    for cand in candidates:
        dup_id = find_duplicate(cand, policy, txn)
        if dup_id is not None:
            txn.add_hyperlink(dup_id, session_id, chunk_id)
            merged += 1
            ops.append({"op": "hyperlink", "triple_id": dup_id})
        else:
            triple = txn.insert_triple(
                cand.subject, cand.relation, cand.object, session_id, chunk_id,
                ts, cand.embedding, cand.subject_type, cand.object_type)
            added += 1
            ops.append({"op": "insert", "triple": triple, "candidate": cand})
    return added, merged, ops


class UpdatePipeline:
    """Orchestrates graph writes for one engine. Single-writer, FIFO.

    ``commit_hook(ops: list[dict], version: int)`` runs after staging and
    before the graph commit; raising there aborts the chunk (this is where
    the engine persists the event batch). Replaying an idempotency_key
    returns the original report without touching the graph.
    """

    def __init__(self, graph: MemoryGraph, backend, policy: DedupPolicy | None = None,
                 commit_hook=None, seen: dict[str, IngestReport] | None = None):
        self.graph = graph
        self.backend = backend
        self.policy = policy or DedupPolicy()
        self.commit_hook = commit_hook
        self._lock = threading.Lock()
        self._waiting = 0
        self._seen: dict[str, IngestReport] = dict(seen) if seen else {}

    @property
    def queue_depth(self) -> int:
        """Ingest requests currently waiting on the writer lock."""
        return self._waiting

    def quiesce(self):
        """The writer lock, for callers that must drain in-flight ingests."""
        return self._lock

    def update_summary(self, txn: GraphTxn, session_id: str, new_text: str,
                       ts: int) -> tuple[str, frozenset[str], bool]:
        """Refresh (or create) the session summary from one new chunk of text."""
        prior = txn.sessions.get(session_id)
        if prior is None:
            summary, keys = self.backend.summarize(new_text)
            created = True
        else:
            summary, keys = self.backend.summarize(new_text, prior.summary or None,
                                                   prior.keys or None)
            created = False
        embedding = self.backend.embed(summary) if summary else None
        txn.upsert_session(session_id, summary, keys, ts, embedding)
        return summary, keys, created

    def ingest_chunk(self, req: IngestRequest) -> IngestReport:
        if not req.session_id:
            raise InvalidArgumentError("session_id must be non-empty")
        if not req.speaker_turns:
            raise InvalidArgumentError("speaker_turns must be non-empty")
        ts = int(req.ts)

        self._waiting += 1
        with self._lock:
            self._waiting -= 1
            if req.idempotency_key is not None and req.idempotency_key in self._seen:
                return replace(self._seen[req.idempotency_key])
            return self._ingest_locked(req, ts)

    def _ingest_locked(self, req: IngestRequest, ts: int) -> IngestReport:
        start = time.perf_counter()
        text = render_turns(list(req.speaker_turns))
        if not text.strip():
            raise InvalidArgumentError("chunk text must be non-empty")

        # All backend calls happen before the transaction opens; a failure
        # here leaves no partial state behind.
        extracted = self.backend.extract_triples(text)
        candidates = canonicalize_candidates(extracted, self.backend.embed)

        txn = self.graph.begin()
        try:
            session_created = req.session_id not in txn.sessions
            prior_summary = None if session_created else txn.sessions[req.session_id].summary
            summary, keys, _ = self.update_summary(txn, req.session_id, text, ts)
            session_node = txn.sessions[req.session_id]
            chunk = txn.insert_chunk(req.session_id, text, req.speaker_turns, ts)
            added, merged, triple_ops = integrate_triples(
                txn, candidates, chunk.chunk_id, req.session_id, ts, self.policy)

            ops = [{"op": "session", "session": session_node,
                    "summary": summary, "keys": keys, "ts": ts},
                   {"op": "chunk", "chunk": chunk,
                    "idempotency_key": req.idempotency_key}]
            ops.extend(triple_ops)
            if self.commit_hook is not None:
                self.commit_hook(ops, self.graph.snapshot().version + 1)
        except BaseException:
            txn.abort()
            raise
        txn.commit()

        tokens = estimate_tokens(text) + estimate_tokens(summary)
        for op in triple_ops:
            if op["op"] == "insert":
                cand = op["candidate"]
                tokens += estimate_tokens(f"{cand.subject} {cand.relation} {cand.object}")

        report = IngestReport(
            chunk_id=chunk.chunk_id,
            session_created=session_created,
            triples_added=added,
            triples_merged=merged,
            summary_updated=(prior_summary != summary),
            elapsed_ms=(time.perf_counter() - start) * 1000.0,
            tokens_estimate=tokens,
        )
        if req.idempotency_key is not None:
            self._seen[req.idempotency_key] = replace(report)
        return report
