"""The engine facade: one object owning the graph, the log, and both pipelines.

Startup recovers state from the newest valid snapshot plus the event log.
Every ingestion is appended (and fsynced) to the log before its in-memory
commit, so a crash at any instant loses at most the transaction that had not
yet been acknowledged. Queries read committed snapshots and never block on
writers.
"""

from __future__ import annotations

import logging
import threading
import time
from pathlib import Path

from .config import EngineConfig
from .errors import NotFoundError
from .graph import MemoryGraph
from .ingest import IngestReport, IngestRequest, UpdatePipeline
from .persistence import (
    EventLog,
    LogScan,
    events_from_ops,
    recover,
    write_snapshot,
)
from .retrieve import Query, RetrievalResult, Retriever
from .textkit import iso_ts

logger = logging.getLogger(__name__)

LOG_FILENAME = "memory.log"
SNAPSHOT_DIRNAME = "snapshots"


def _reports_from_scan(scan: LogScan) -> dict[str, IngestReport]:
    """Rebuild the idempotency map from replayed transactions.

    Chunk id and triple counts are exact; per-request timing, token estimates
    and the created/updated flags are not reconstructable from the log, so
    they come back zeroed. Good enough to suppress duplicate retries across
    restarts.
    """
    out: dict[str, IngestReport] = {}
    for group in scan.transactions:
        chunk_ev = next((e for e in group if e.kind == "chunk_inserted"), None)
        if chunk_ev is None:
            continue
        key = chunk_ev.payload.get("idempotency_key")
        if not key:
            continue
        out[key] = IngestReport(
            chunk_id=chunk_ev.payload["chunk_id"],
            session_created=False,
            triples_added=sum(1 for e in group if e.kind == "triple_inserted"),
            triples_merged=sum(1 for e in group if e.kind == "hyperlink_added"),
            summary_updated=False,
            elapsed_ms=0.0,
            tokens_estimate=0,
        )
    return out


class MemoryEngine:
    """Process-wide entry point. Thread-safe: one writer at a time, any
    number of concurrent readers."""

    def __init__(self, config: EngineConfig | None = None, backend=None):
        self.config = config or EngineConfig()
        self.backend = backend if backend is not None else self.config.make_backend()
        self.data_dir = Path(self.config.storage.data_dir)
        self.log_path = self.data_dir / LOG_FILENAME
        self.snapshot_dir = self.data_dir / SNAPSHOT_DIRNAME

        self.graph = MemoryGraph()
        scan = recover(self.graph, self.log_path, self.snapshot_dir, self.backend.dim)
        if scan.transactions or scan.torn_tail:
            logger.info("recovered %d transactions from %s%s",
                        len(scan.transactions), self.log_path,
                        " (discarded torn tail)" if scan.torn_tail else "")
        self._log = EventLog(self.log_path, start_seq=scan.last_seq,
                             truncate_to=scan.valid_end)
        self._events_since_snapshot = 0
        self._snapshot_lock = threading.Lock()
        self._closed = False
        self._started_monotonic = time.monotonic()

        self.pipeline = UpdatePipeline(
            self.graph, self.backend, self.config.dedup_policy(),
            commit_hook=self._persist_ops, seen=_reports_from_scan(scan))
        self.retriever = Retriever(
            self.backend, self.config.scoring_params(), self.config.retrieval_options())

    # -- write path -----------------------------------------------------------

    def _persist_ops(self, ops: list[dict], version: int) -> None:
        events = self._log.append_batch(events_from_ops(ops), txn=version)
        self._events_since_snapshot += len(events)

    def ingest(self, request: IngestRequest | dict) -> IngestReport:
        if isinstance(request, dict):
            request = IngestRequest.from_dict(request)
        report = self.pipeline.ingest_chunk(request)
        if self._events_since_snapshot >= self.config.storage.snapshot_every:
            self.snapshot_now()
        return report

    def snapshot_now(self) -> Path:
        """Write a full snapshot of the committed graph; resets the cadence."""
        with self._snapshot_lock:
            path = write_snapshot(self.graph.snapshot(), self.snapshot_dir,
                                  self.backend.dim)
            self._events_since_snapshot = 0
        return path

    # -- read path --------------------------------------------------------------

    def query(self, query: Query | str, **kwargs) -> RetrievalResult:
        if isinstance(query, str):
            query = Query(text=query, **kwargs)
        return self.retriever.retrieve(self.graph.snapshot(), query,
                                       now_ts=int(time.time()))

    def session_view(self, session_id: str) -> dict:
        snap = self.graph.snapshot()
        node = snap.sessions.get(session_id)
        if node is None:
            raise NotFoundError(f"unknown session {session_id!r}")
        return {
            "session_id": node.session_id,
            "summary": node.summary,
            "keys": sorted(node.keys),
            "first_ts": node.first_ts,
            "last_ts": node.last_ts,
            "first_ts_iso": iso_ts(node.first_ts),
            "last_ts_iso": iso_ts(node.last_ts),
            "chunk_ids": list(node.chunk_ids),
            "triple_ids": sorted(node.triple_ids),
        }

    def stats(self) -> dict:
        snap = self.graph.snapshot()
        return {
            "graph_version": snap.version,
            "sessions": len(snap.sessions),
            "entities": len(snap.entities),
            "triples": len(snap.triples),
            "chunks": len(snap.chunks),
            "hyperlinks": snap.hyperlink_count(),
            "queue_depth": self.pipeline.queue_depth,
            "log_seq": self._log.next_seq - 1,
            "events_since_snapshot": self._events_since_snapshot,
            "embedding_dim": self.backend.dim,
            "uptime_s": time.monotonic() - self._started_monotonic,
            "data_dir": str(self.data_dir),
        }

    # -- lifecycle ---------------------------------------------------------------

    def close(self) -> None:
        """Drain in-flight writes, snapshot if anything is unsnapshotted, close."""
        if self._closed:
            return
        with self.pipeline.quiesce():
            if self._events_since_snapshot > 0:
                try:
                    self.snapshot_now()
                except Exception:
                    logger.exception("final snapshot failed; log remains authoritative")
            self._log.close()
            self._closed = True

    def __enter__(self) -> "MemoryEngine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
