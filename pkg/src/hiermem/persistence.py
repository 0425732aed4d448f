"""Durability: append-only event log plus periodic full snapshots.

Log format: one event per line, ``<crc32 hex> <canonical JSON>``. Events
carry a transaction number (the graph version their batch produced) and the
last event of a batch is flagged ``commit``. Recovery replays only complete
transactions, so a crash mid-append can never surface half an ingestion;
the torn tail is truncated on the next writer open. Corruption that is not
a torn tail (a bad line with valid events after it) refuses to load.

Embeddings travel inside payloads as hex-encoded little-endian float64, so
replay reconstructs bitwise-identical vectors without calling any backend.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CorruptLogError, PersistenceError
from .graph import (
    Chunk,
    EntityNode,
    GraphSnapshot,
    MemoryGraph,
    SessionNode,
    Triple,
)

logger = logging.getLogger(__name__)

EVENT_KINDS = ("session_upserted", "chunk_inserted", "triple_inserted", "hyperlink_added")
SNAPSHOT_FORMAT_VERSION = 1
SNAPSHOT_GLOB = "snapshot-*.snap"


def canonical_json(obj) -> str:
    """Stable single-line JSON: sorted keys, tight separators, ASCII only."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def encode_embedding(vec: np.ndarray | None) -> str | None:
    if vec is None:
        return None
    return np.asarray(vec, dtype="<f8").tobytes().hex()


def decode_embedding(blob: str | None) -> np.ndarray | None:
    if blob is None:
        return None
    try:
        vec = np.frombuffer(bytes.fromhex(blob), dtype="<f8").copy()
    except ValueError as exc:
        raise PersistenceError(f"bad embedding hex: {exc}") from exc
    vec.setflags(write=False)
    return vec


@dataclass(frozen=True)
class MemoryEvent:
    """One durable graph mutation."""

    seq: int
    txn: int
    commit: bool
    kind: str
    wall_ts: float
    payload: dict

    def to_line(self) -> bytes:
        body = canonical_json({
            "seq": self.seq, "txn": self.txn, "commit": self.commit,
            "kind": self.kind, "wall_ts": self.wall_ts, "payload": self.payload,
        }).encode("utf-8")
        crc = zlib.crc32(body) & 0xFFFFFFFF
        return f"{crc:08x} ".encode("ascii") + body + b"\n"


def _parse_line(raw: bytes, position: int, last_seq: int,
                expected_seq: int | None = None) -> MemoryEvent:
    """Decode and verify one log line; raises CorruptLogError on any defect.

    expected_seq=None skips the continuity check (used when probing whether
    bytes after a defect still hold structurally valid events).
    """
    parts = raw.split(b" ", 1)
    if len(parts) != 2 or len(parts[0]) != 8:
        raise CorruptLogError(position, last_seq, "malformed line framing")
    try:
        want_crc = int(parts[0], 16)
    except ValueError:
        raise CorruptLogError(position, last_seq, "bad checksum field") from None
    if zlib.crc32(parts[1]) & 0xFFFFFFFF != want_crc:
        raise CorruptLogError(position, last_seq, "checksum mismatch")
    try:
        obj = json.loads(parts[1])
    except json.JSONDecodeError as exc:
        raise CorruptLogError(position, last_seq, f"bad JSON: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != {
            "seq", "txn", "commit", "kind", "wall_ts", "payload"}:
        raise CorruptLogError(position, last_seq, "bad envelope keys")
    if obj["kind"] not in EVENT_KINDS:
        raise CorruptLogError(position, last_seq, f"unknown kind {obj['kind']!r}")
    if not isinstance(obj["payload"], dict):
        raise CorruptLogError(position, last_seq, "payload must be an object")
    if expected_seq is not None and obj["seq"] != expected_seq:
        raise CorruptLogError(position, last_seq,
                              f"sequence gap: expected {expected_seq}, got {obj['seq']}")
    return MemoryEvent(obj["seq"], obj["txn"], bool(obj["commit"]), obj["kind"],
                       float(obj["wall_ts"]), obj["payload"])


@dataclass
class LogScan:
    """Result of reading a log file: complete transactions plus tail facts."""

    transactions: list[list[MemoryEvent]] = field(default_factory=list)
    last_seq: int = 0
    valid_end: int = 0
    discarded_events: int = 0
    torn_tail: bool = False

    @property
    def events(self) -> list[MemoryEvent]:
        return [ev for group in self.transactions for ev in group]


def scan_log(path: str | Path) -> LogScan:
    """Read the log, keeping only complete transactions.

    A defective line is tolerated only as a torn tail: if any later line
    still parses as a valid event, the file is corrupt in the middle and a
    CorruptLogError is raised instead.
    """
    path = Path(path)
    scan = LogScan()
    if not path.exists():
        return scan
    data = path.read_bytes()

    offset = 0
    last_seq = 0
    pending: list[MemoryEvent] = []
    pending_start = 0
    while offset < len(data):
        newline = data.find(b"\n", offset)
        if newline < 0:
            _require_tail(data, offset, last_seq)
            scan.torn_tail = True
            break
        raw = data[offset:newline]
        try:
            event = _parse_line(raw, offset, last_seq, expected_seq=last_seq + 1)
        except CorruptLogError:
            _require_tail(data, newline + 1, last_seq)
            scan.torn_tail = True
            break
        if pending and event.txn != pending[0].txn:
            # Only the final transaction may be missing its commit marker.
            raise CorruptLogError(pending_start, last_seq,
                                  f"transaction {pending[0].txn} never committed")
        if not pending:
            pending_start = offset
        pending.append(event)
        last_seq = event.seq
        offset = newline + 1
        if event.commit:
            scan.transactions.append(pending)
            pending = []
            scan.last_seq = last_seq
            scan.valid_end = offset
    scan.discarded_events += len(pending)
    if pending:
        scan.torn_tail = True
    return scan


def _require_tail(data: bytes, from_offset: int, last_seq: int) -> None:
    """Raise unless everything from from_offset on is garbage (torn tail)."""
    offset = from_offset
    while offset < len(data):
        newline = data.find(b"\n", offset)
        if newline < 0:
            return
        try:
            _parse_line(data[offset:newline], offset, last_seq, expected_seq=None)
        except CorruptLogError:
            offset = newline + 1
            continue
        raise CorruptLogError(from_offset, last_seq,
                              "corrupt line followed by valid events")


class EventLog:
    """Append side of the log. One writer; every batch is fsynced."""

    def __init__(self, path: str | Path, start_seq: int = 0,
                 truncate_to: int | None = None):
        self.path = Path(path)
        self._seq = start_seq
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if truncate_to is not None and self.path.exists():
            size = self.path.stat().st_size
            if truncate_to < size:
                logger.warning("truncating torn log tail: %s bytes -> %s",
                               size, truncate_to)
                with open(self.path, "r+b") as fh:
                    fh.truncate(truncate_to)
        self._fh = open(self.path, "ab")

    @property
    def next_seq(self) -> int:
        return self._seq + 1

    def append_batch(self, batch: list[tuple[str, dict]], txn: int) -> list[MemoryEvent]:
        """Durably append one transaction; the last event carries the commit flag.

        The whole batch goes down in a single write followed by fsync, and
        must succeed before the in-memory commit it mirrors.
        """
        if not batch:
            raise PersistenceError("refusing to append an empty transaction")
        now = time.time()
        events = []
        for i, (kind, payload) in enumerate(batch):
            self._seq += 1
            events.append(MemoryEvent(self._seq, txn, i == len(batch) - 1,
                                      kind, now, payload))
        try:
            self._fh.write(b"".join(ev.to_line() for ev in events))
            self._fh.flush()
            os.fsync(self._fh.fileno())
        except OSError as exc:
            self._seq -= len(events)
            raise PersistenceError(f"log append failed: {exc}") from exc
        return events

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


# -- ops -> event payloads ---------------------------------------------------


def events_from_ops(ops: list[dict]) -> list[tuple[str, dict]]:
    """Translate one ingestion's staged operations into loggable events."""
    chunk_op = next(op for op in ops if op["op"] == "chunk")
    chunk = chunk_op["chunk"]
    out: list[tuple[str, dict]] = []
    for op in ops:
        if op["op"] == "session":
            node = op["session"]
            out.append(("session_upserted", {
                "session_id": node.session_id,
                "summary": op["summary"],
                "keys": sorted(op["keys"]),
                "ts": op["ts"],
                "embedding": encode_embedding(node.summary_embedding),
            }))
        elif op["op"] == "chunk":
            out.append(("chunk_inserted", {
                "chunk_id": chunk.chunk_id,
                "session_id": chunk.session_id,
                "text": chunk.text,
                "ts": chunk.ts,
                "turns": [[s, u] for s, u in chunk.speaker_turns],
                "idempotency_key": op.get("idempotency_key"),
            }))
        elif op["op"] == "insert":
            triple, cand = op["triple"], op["candidate"]
            out.append(("triple_inserted", {
                "triple_id": triple.triple_id,
                "subject": cand.subject,
                "subject_type": cand.subject_type,
                "relation": triple.relation,
                "object": cand.object,
                "object_type": cand.object_type,
                "session_id": chunk.session_id,
                "chunk_id": chunk.chunk_id,
                "ts": triple.ts,
                "embedding": encode_embedding(triple.relation_embedding),
            }))
        elif op["op"] == "hyperlink":
            out.append(("hyperlink_added", {
                "triple_id": op["triple_id"],
                "session_id": chunk.session_id,
                "chunk_id": chunk.chunk_id,
            }))
        else:
            raise PersistenceError(f"unknown op {op['op']!r}")
    return out


def apply_transaction(graph: MemoryGraph, group: list[MemoryEvent]) -> None:
    """Replay one complete logged transaction into the graph."""
    txn_no = group[0].txn
    current = graph.snapshot().version
    if txn_no <= current:
        return  # already covered by the snapshot we started from
    if txn_no != current + 1:
        raise CorruptLogError(0, group[0].seq - 1,
                              f"transaction gap: graph at {current}, log has {txn_no}")
    txn = graph.begin()
    try:
        for ev in group:
            p = ev.payload
            if ev.kind == "session_upserted":
                txn.upsert_session(p["session_id"], p["summary"], frozenset(p["keys"]),
                                   p["ts"], decode_embedding(p["embedding"]))
            elif ev.kind == "chunk_inserted":
                turns = tuple((s, u) for s, u in p["turns"])
                txn.insert_chunk(p["session_id"], p["text"], turns, p["ts"],
                                 chunk_id=p["chunk_id"])
            elif ev.kind == "triple_inserted":
                txn.insert_triple(p["subject"], p["relation"], p["object"],
                                  p["session_id"], p["chunk_id"], p["ts"],
                                  decode_embedding(p["embedding"]),
                                  p["subject_type"], p["object_type"],
                                  triple_id=p["triple_id"])
            elif ev.kind == "hyperlink_added":
                txn.add_hyperlink(p["triple_id"], p["session_id"], p["chunk_id"])
    except BaseException:
        txn.abort()
        raise
    txn.commit()


# -- snapshots ----------------------------------------------------------------


def _session_to_obj(node: SessionNode) -> dict:
    return {
        "session_id": node.session_id, "summary": node.summary,
        "keys": sorted(node.keys), "first_ts": node.first_ts, "last_ts": node.last_ts,
        "triple_ids": sorted(node.triple_ids), "chunk_ids": list(node.chunk_ids),
        "embedding": encode_embedding(node.summary_embedding),
    }


def _triple_to_obj(t: Triple) -> dict:
    return {
        "triple_id": t.triple_id, "subject_id": t.subject_id, "relation": t.relation,
        "object_id": t.object_id, "session_ids": sorted(t.session_ids),
        "chunk_ids": sorted(t.chunk_ids), "ts": t.ts,
        "embedding": encode_embedding(t.relation_embedding),
    }


def snapshot_to_obj(snap: GraphSnapshot, embedding_dim: int) -> dict:
    body = {
        "format_version": SNAPSHOT_FORMAT_VERSION,
        "graph_version": snap.version,
        "embedding_dim": embedding_dim,
        "saved_wall_ts": time.time(),
        "sessions": [_session_to_obj(s) for _, s in sorted(snap.sessions.items())],
        "entities": [
            {"entity_id": e.entity_id, "name": e.name, "entity_type": e.entity_type}
            for _, e in sorted(snap.entities.items())
        ],
        "triples": [_triple_to_obj(t) for _, t in sorted(snap.triples.items())],
        "chunks": [
            {"chunk_id": c.chunk_id, "session_id": c.session_id, "text": c.text,
             "ts": c.ts, "turns": [[s, u] for s, u in c.speaker_turns]}
            for _, c in sorted(snap.chunks.items())
        ],
    }
    body["checksum"] = hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()
    return body


def write_snapshot(snap: GraphSnapshot, directory: str | Path,
                   embedding_dim: int) -> Path:
    """Write snapshot-<version>.snap atomically (temp file + rename + fsync)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / f"snapshot-{snap.version:08d}.snap"
    tmp = target.with_suffix(".snap.tmp")
    body = snapshot_to_obj(snap, embedding_dim)
    with open(tmp, "wb") as fh:
        fh.write(canonical_json(body).encode("utf-8"))
        fh.write(b"\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, target)
    dir_fd = os.open(directory, os.O_RDONLY)
    try:
        os.fsync(dir_fd)
    finally:
        os.close(dir_fd)
    return target


def load_snapshot(path: str | Path, expected_dim: int) -> GraphSnapshot:
    """Parse and verify one snapshot file into an immutable graph view."""
    path = Path(path)
    try:
        body = json.loads(path.read_bytes())
    except (OSError, ValueError) as exc:  # JSONDecodeError and encoding defects
        raise PersistenceError(f"unreadable snapshot {path.name}: {exc}") from exc
    if not isinstance(body, dict) or "checksum" not in body:
        raise PersistenceError(f"snapshot {path.name} has no checksum")
    claimed = body.pop("checksum")
    actual = hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()
    if claimed != actual:
        raise PersistenceError(f"snapshot {path.name} checksum mismatch")
    if body.get("format_version") != SNAPSHOT_FORMAT_VERSION:
        raise PersistenceError(
            f"snapshot {path.name} has format {body.get('format_version')!r}, "
            f"expected {SNAPSHOT_FORMAT_VERSION}")
    if body.get("embedding_dim") != expected_dim:
        raise PersistenceError(
            f"snapshot {path.name} was built with embedding_dim="
            f"{body.get('embedding_dim')}, engine is configured for {expected_dim}")

    sessions = {}
    for s in body["sessions"]:
        sessions[s["session_id"]] = SessionNode(
            s["session_id"], s["summary"], frozenset(s["keys"]),
            s["first_ts"], s["last_ts"], frozenset(s["triple_ids"]),
            tuple(s["chunk_ids"]), decode_embedding(s["embedding"]))
    entities = {
        e["entity_id"]: EntityNode(e["entity_id"], e["name"], e["entity_type"])
        for e in body["entities"]
    }
    triples = {}
    for t in body["triples"]:
        triples[t["triple_id"]] = Triple(
            t["triple_id"], t["subject_id"], t["relation"], t["object_id"],
            frozenset(t["session_ids"]), frozenset(t["chunk_ids"]), t["ts"],
            decode_embedding(t["embedding"]))
    chunks = {}
    for c in body["chunks"]:
        chunks[c["chunk_id"]] = Chunk(
            c["chunk_id"], c["session_id"], c["text"], c["ts"],
            tuple((s, u) for s, u in c["turns"]))

    entity_triples: dict[str, frozenset[str]] = {}
    pair_triples: dict[tuple[str, str], tuple[str, ...]] = {}
    for tid in sorted(triples):
        t = triples[tid]
        for eid in {t.subject_id, t.object_id}:
            entity_triples[eid] = entity_triples.get(eid, frozenset()) | {tid}
        pair = (t.subject_id, t.object_id)
        pair_triples[pair] = pair_triples.get(pair, ()) + (tid,)
        for cid in t.chunk_ids:
            if cid in chunks:
                chunks[cid] = replace(chunks[cid], triple_ids=chunks[cid].triple_ids | {tid})

    return GraphSnapshot(body["graph_version"], sessions, entities, triples,
                         chunks, entity_triples, pair_triples)


def find_latest_snapshot(directory: str | Path, expected_dim: int,
                         ) -> GraphSnapshot | None:
    """Newest loadable snapshot in the directory, skipping damaged ones."""
    directory = Path(directory)
    if not directory.is_dir():
        return None
    for path in sorted(directory.glob(SNAPSHOT_GLOB), reverse=True):
        try:
            return load_snapshot(path, expected_dim)
        except PersistenceError as exc:
            logger.warning("skipping snapshot %s: %s", path.name, exc)
    return None


def recover(graph: MemoryGraph, log_path: str | Path, snapshot_dir: str | Path,
            expected_dim: int) -> LogScan:
    """Rebuild graph state: newest valid snapshot, then replay newer txns."""
    snap = find_latest_snapshot(snapshot_dir, expected_dim)
    if snap is not None:
        graph.restore(snap)
    scan = scan_log(log_path)
    for group in scan.transactions:
        apply_transaction(graph, group)
    graph.sync_id_counter()
    return scan
