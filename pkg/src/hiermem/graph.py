"""Three-layer memory graph: session summaries, entity-relation triples, chunks.

The layers are cross-linked ("hyperlinked") in both directions: sessions and
chunks know their triples, triples know their source sessions and chunks.
Nodes are immutable; every update replaces the node object, so a snapshot is
just a frozen view of the committed collections.

Concurrency model: single writer, many readers. All mutations go through a
transaction that stages changes on copied collections and commits by swapping
the snapshot pointer, so a reader never observes a half-applied ingestion.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError, NotFoundError
from .textkit import canonicalize, render_turns

ENTITY_TYPES = ("person", "place", "organization", "topic", "time", "other")

UNIT_NORM_TOL = 1e-6


def _check_embedding(vec: np.ndarray, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise InvalidArgumentError(f"{what}: embedding must be a non-empty 1-d vector")
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > UNIT_NORM_TOL:
        raise InvalidArgumentError(f"{what}: embedding not unit-norm (|v|={norm:.8f})")
    vec.setflags(write=False)
    return vec


@dataclass(frozen=True, eq=False)
class SessionNode:
    """Top layer: one conversation session's summary and distilled keys.

    eq=False: the embedding field makes value equality ill-defined; nodes are
    identified by session_id and compared by identity.
    """

    session_id: str
    summary: str
    keys: frozenset[str]
    first_ts: int
    last_ts: int
    triple_ids: frozenset[str] = frozenset()
    chunk_ids: tuple[str, ...] = ()
    summary_embedding: np.ndarray | None = None


@dataclass(frozen=True)
class EntityNode:
    """Middle layer vertex: canonical id plus a display name and coarse type."""

    entity_id: str
    name: str
    entity_type: str = "other"


@dataclass(frozen=True, eq=False)
class Triple:
    """Middle layer edge: subject-relation-object, hyperlinked to its sources.

    eq=False for the same reason as SessionNode: identity semantics, with
    triple_id as the durable name.
    """

    triple_id: str
    subject_id: str
    relation: str
    object_id: str
    session_ids: frozenset[str]
    chunk_ids: frozenset[str]
    ts: int
    relation_embedding: np.ndarray

    def sentence(self, entities: dict[str, EntityNode]) -> str:
        """Canonical triple sentence, the text behind relation_embedding."""
        return triple_sentence(
            entities[self.subject_id].name, self.relation, entities[self.object_id].name
        )


@dataclass(frozen=True)
class Chunk:
    """Bottom layer: one verbatim dialogue segment, the evidence store."""

    chunk_id: str
    session_id: str
    text: str
    ts: int
    speaker_turns: tuple[tuple[str, str], ...]
    triple_ids: frozenset[str] = frozenset()


def triple_sentence(subject: str, relation: str, obj: str) -> str:
    """The one canonical rendering shared by dedup and retrieval embeddings."""
    return canonicalize(f"{subject} {relation} {obj}")


@dataclass(frozen=True)
class GraphSnapshot:
    """Immutable, consistent view of the whole graph at one version."""

    version: int
    sessions: dict[str, SessionNode]
    entities: dict[str, EntityNode]
    triples: dict[str, Triple]
    chunks: dict[str, Chunk]
    entity_triples: dict[str, frozenset[str]] = field(default_factory=dict)
    pair_triples: dict[tuple[str, str], tuple[str, ...]] = field(default_factory=dict)

    def neighbors(self, entity_id: str) -> set[Triple]:
        """All triples with entity_id as subject or object; empty if unknown."""
        ids = self.entity_triples.get(entity_id, frozenset())
        return {self.triples[t] for t in ids}

    def hyperlink_count(self) -> int:
        """Total cross-layer references held by triples."""
        return sum(len(t.session_ids) + len(t.chunk_ids) for t in self.triples.values())


class GraphTxn:
    """Staged mutation batch; apply operations, then commit() or abort().

    All operations validate against the staged state, so later operations in
    the same batch observe earlier ones (needed for intra-batch dedup).
    """

    def __init__(self, graph: "MemoryGraph", base: GraphSnapshot):
        self._graph = graph
        self._base = base
        self.sessions = dict(base.sessions)
        self.entities = dict(base.entities)
        self.triples = dict(base.triples)
        self.chunks = dict(base.chunks)
        self.entity_triples = dict(base.entity_triples)
        self.pair_triples = dict(base.pair_triples)
        self._done = False

    # -- operations ---------------------------------------------------------

    def upsert_session(self, session_id: str, summary: str, keys, ts: int,
                       summary_embedding: np.ndarray | None = None) -> SessionNode:
        if not session_id:
            raise InvalidArgumentError("session_id must be non-empty")
        keys = frozenset(k for k in keys if k)
        if summary and not keys:
            raise InvalidArgumentError("keys must be non-empty when summary is non-empty")
        if summary_embedding is not None:
            summary_embedding = _check_embedding(summary_embedding, "summary")
        prior = self.sessions.get(session_id)
        if prior is None:
            node = SessionNode(session_id, summary, keys, first_ts=ts, last_ts=ts,
                               summary_embedding=summary_embedding)
        else:
            node = replace(prior, summary=summary, keys=keys,
                           last_ts=max(prior.last_ts, ts),
                           summary_embedding=summary_embedding)
        self.sessions[session_id] = node
        return node

    def insert_chunk(self, session_id: str, text: str, speaker_turns, ts: int,
                     chunk_id: str | None = None) -> Chunk:
        session = self.sessions.get(session_id)
        if session is None:
            raise NotFoundError(f"unknown session {session_id!r}")
        if not text:
            raise InvalidArgumentError("chunk text must be non-empty")
        turns = tuple((str(s), str(u)) for s, u in speaker_turns)
        if turns and render_turns(list(turns)) != text:
            raise InvalidArgumentError("chunk text does not match its speaker turns")
        if chunk_id is None:
            chunk_id = self._graph._next_id("c")
        elif chunk_id in self.chunks:
            raise InvalidArgumentError(f"duplicate chunk id {chunk_id!r}")
        chunk = Chunk(chunk_id, session_id, text, ts, turns)
        self.chunks[chunk_id] = chunk
        self.sessions[session_id] = replace(
            session,
            chunk_ids=session.chunk_ids + (chunk_id,),
            first_ts=min(session.first_ts, ts),
            last_ts=max(session.last_ts, ts),
        )
        return chunk

    def insert_triple(self, subject: str, relation: str, obj: str,
                      session_id: str, chunk_id: str, ts: int,
                      embedding: np.ndarray,
                      subject_type: str = "other", object_type: str = "other",
                      triple_id: str | None = None) -> Triple:
        if session_id not in self.sessions:
            raise NotFoundError(f"unknown session {session_id!r}")
        if chunk_id not in self.chunks:
            raise NotFoundError(f"unknown chunk {chunk_id!r}")
        relation = canonicalize(relation)
        if not relation:
            raise InvalidArgumentError("relation is empty after canonicalization")
        embedding = _check_embedding(embedding, "triple")
        subject_id = self._upsert_entity(subject, subject_type)
        object_id = self._upsert_entity(obj, object_type)
        if triple_id is None:
            triple_id = self._graph._next_id("t")
        elif triple_id in self.triples:
            raise InvalidArgumentError(f"duplicate triple id {triple_id!r}")
        triple = Triple(triple_id, subject_id, relation, object_id,
                        session_ids=frozenset({session_id}),
                        chunk_ids=frozenset({chunk_id}),
                        ts=ts, relation_embedding=embedding)
        self.triples[triple_id] = triple
        self._link_back(triple_id, session_id, chunk_id)
        for eid in {subject_id, object_id}:
            self.entity_triples[eid] = self.entity_triples.get(eid, frozenset()) | {triple_id}
        pair = (subject_id, object_id)
        self.pair_triples[pair] = self.pair_triples.get(pair, ()) + (triple_id,)
        return triple

    def add_hyperlink(self, triple_id: str, session_id: str, chunk_id: str) -> Triple:
        triple = self.triples.get(triple_id)
        if triple is None:
            raise NotFoundError(f"unknown triple {triple_id!r}")
        if session_id not in self.sessions:
            raise NotFoundError(f"unknown session {session_id!r}")
        if chunk_id not in self.chunks:
            raise NotFoundError(f"unknown chunk {chunk_id!r}")
        triple = replace(triple,
                         session_ids=triple.session_ids | {session_id},
                         chunk_ids=triple.chunk_ids | {chunk_id})
        self.triples[triple_id] = triple
        self._link_back(triple_id, session_id, chunk_id)
        return triple

    # -- plumbing -----------------------------------------------------------

    def _upsert_entity(self, name: str, entity_type: str) -> str:
        entity_id = canonicalize(name)
        if not entity_id:
            raise InvalidArgumentError("entity name is empty after canonicalization")
        if entity_type not in ENTITY_TYPES:
            entity_type = "other"
        # First write wins: the display name and type stay stable afterwards.
        if entity_id not in self.entities:
            self.entities[entity_id] = EntityNode(entity_id, name.strip(), entity_type)
        return entity_id

    def _link_back(self, triple_id: str, session_id: str, chunk_id: str) -> None:
        session = self.sessions[session_id]
        self.sessions[session_id] = replace(session, triple_ids=session.triple_ids | {triple_id})
        chunk = self.chunks[chunk_id]
        self.chunks[chunk_id] = replace(chunk, triple_ids=chunk.triple_ids | {triple_id})

    def commit(self) -> GraphSnapshot:
        if self._done:
            raise InvalidArgumentError("transaction already finished")
        self._done = True
        return self._graph._commit(self)

    def abort(self) -> None:
        self._done = True
        self._graph._abort(self)


class MemoryGraph:
    """The mutable store. Handles may be shared across threads.

    Reads never block: ``snapshot()`` returns the committed view by reference.
    Writers serialize on an internal lock; one transaction commits at a time.
    """

    def __init__(self):
        self._write_lock = threading.RLock()
        self._committed = GraphSnapshot(0, {}, {}, {}, {})
        self._id_counter = 0

    def _next_id(self, prefix: str) -> str:
        self._id_counter += 1
        return f"{prefix}{self._id_counter:08d}"

    def sync_id_counter(self) -> None:
        """After replay with explicit ids, move the counter past every known id."""
        snap = self._committed
        highest = 0
        for pool in (snap.triples, snap.chunks):
            for node_id in pool:
                suffix = node_id[1:]
                if suffix.isdigit():
                    highest = max(highest, int(suffix))
        self._id_counter = max(self._id_counter, highest)

    def begin(self) -> GraphTxn:
        self._write_lock.acquire()
        return GraphTxn(self, self._committed)

    def _commit(self, txn: GraphTxn) -> GraphSnapshot:
        snap = GraphSnapshot(
            version=self._committed.version + 1,
            sessions=txn.sessions, entities=txn.entities,
            triples=txn.triples, chunks=txn.chunks,
            entity_triples=txn.entity_triples, pair_triples=txn.pair_triples,
        )
        self._committed = snap
        self._write_lock.release()
        return snap

    def _abort(self, txn: GraphTxn) -> None:
        self._write_lock.release()

    def snapshot(self) -> GraphSnapshot:
        return self._committed

    def restore(self, snapshot: GraphSnapshot) -> None:
        """Adopt a recovered snapshot as the committed state (startup only)."""
        with self._write_lock:
            self._committed = snapshot
            self.sync_id_counter()

    # Single-operation conveniences: one op, one committed version.

    def upsert_session(self, session_id, summary, keys, ts,
                       summary_embedding=None) -> SessionNode:
        txn = self.begin()
        try:
            node = txn.upsert_session(session_id, summary, keys, ts, summary_embedding)
        except BaseException:
            txn.abort()
            raise
        txn.commit()
        return node

    def insert_chunk(self, session_id, text, speaker_turns, ts, chunk_id=None) -> Chunk:
        txn = self.begin()
        try:
            chunk = txn.insert_chunk(session_id, text, speaker_turns, ts, chunk_id)
        except BaseException:
            txn.abort()
            raise
        txn.commit()
        return chunk

    def insert_triple(self, subject, relation, obj, session_id, chunk_id, ts,
                      embedding, subject_type="other", object_type="other",
                      triple_id=None) -> Triple:
        txn = self.begin()
        try:
            triple = txn.insert_triple(subject, relation, obj, session_id, chunk_id,
                                       ts, embedding, subject_type, object_type, triple_id)
        except BaseException:
            txn.abort()
            raise
        txn.commit()
        return triple

    def add_hyperlink(self, triple_id, session_id, chunk_id) -> Triple:
        txn = self.begin()
        try:
            triple = txn.add_hyperlink(triple_id, session_id, chunk_id)
        except BaseException:
            txn.abort()
            raise
        txn.commit()
        return triple

    def neighbors(self, entity_id: str) -> set[Triple]:
        return self._committed.neighbors(entity_id)
