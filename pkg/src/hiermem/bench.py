"""Benchmark harness: replay a transcript dataset, ask its questions, score.

Dataset format is JSONL with two record types:

    {"type": "chunk", "session_id": "s1", "ts": ..., "turns": [{"speaker": ..., "text": ...}], "chunk_id"?}
    {"type": "question", "qid": "q1", "ts": ..., "text": ...,
     "evidence_session_ids": [...], "evidence_chunk_ids": [...], "answer"?}

Chunks are ingested in file order; a chunk without an explicit id gets
``<session_id>#<ordinal>``. Dataset chunk ids ride along as idempotency keys
so answers can be scored against the engine's own chunk ids afterwards.

Metrics: recall@k (a question scores a hit when any of its evidence chunks
appears in the retrieved SOURCE DIALOGUE), mean retrieval latency and context
tokens per question, and mean ingest latency and tokens per session. Reports
can be serialized with timing fields masked, which makes two runs over the
same dataset byte-comparable.
"""

from __future__ import annotations

import json
import statistics
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

from .config import EngineConfig
from .engine import MemoryEngine
from .errors import InvalidArgumentError
from .ingest import IngestRequest
from .retrieve import Query
from .textkit import parse_ts

TIMING_FIELDS = ("t_r_ms", "t_r_ms_mean", "t_g_ms_mean")


@dataclass(frozen=True)
class DatasetChunk:
    chunk_id: str
    session_id: str
    ts: int
    turns: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class DatasetQuestion:
    qid: str
    ts: int
    text: str
    evidence_session_ids: tuple[str, ...]
    evidence_chunk_ids: tuple[str, ...]
    answer: str | None = None


@dataclass
class TranscriptDataset:
    name: str
    chunks: list[DatasetChunk]
    questions: list[DatasetQuestion]

    @property
    def session_ids(self) -> list[str]:
        seen: list[str] = []
        for chunk in self.chunks:
            if chunk.session_id not in seen:
                seen.append(chunk.session_id)
        return seen


def _require(record: dict, key: str, lineno: int):
    if key not in record:
        raise InvalidArgumentError(f"line {lineno}: missing field {key!r}")
    return record[key]


def _parse_turns(raw, lineno: int) -> tuple[tuple[str, str], ...]:
    if not isinstance(raw, list) or not raw:
        raise InvalidArgumentError(f"line {lineno}: turns must be a non-empty list")
    turns = []
    for turn in raw:
        if not isinstance(turn, dict) or not turn.get("speaker") or "text" not in turn:
            raise InvalidArgumentError(f"line {lineno}: each turn needs speaker and text")
        turns.append((str(turn["speaker"]), str(turn["text"])))
    return tuple(turns)


def _parse_id_list(raw, what: str, lineno: int, allow_empty: bool) -> tuple[str, ...]:
    if not isinstance(raw, list) or (not raw and not allow_empty):
        raise InvalidArgumentError(f"line {lineno}: {what} must be a non-empty list")
    if not all(isinstance(x, str) and x for x in raw):
        raise InvalidArgumentError(f"line {lineno}: {what} must contain non-empty strings")
    return tuple(raw)


def load_transcript(path: str | Path) -> TranscriptDataset:
    """Parse and validate a JSONL transcript dataset."""
    path = Path(path)
    chunks: list[DatasetChunk] = []
    questions: list[DatasetQuestion] = []
    per_session_count: dict[str, int] = {}
    seen_chunk_ids: set[str] = set()
    seen_qids: set[str] = set()

    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read dataset {path}: {exc}") from exc

    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"line {lineno}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise InvalidArgumentError(f"line {lineno}: expected an object")
        kind = record.get("type")
        if kind == "chunk":
            session_id = str(_require(record, "session_id", lineno))
            if not session_id:
                raise InvalidArgumentError(f"line {lineno}: session_id must be non-empty")
            ts = parse_ts(_require(record, "ts", lineno))
            turns = _parse_turns(_require(record, "turns", lineno), lineno)
            ordinal = per_session_count.get(session_id, 0)
            per_session_count[session_id] = ordinal + 1
            chunk_id = record.get("chunk_id") or f"{session_id}#{ordinal}"
            if chunk_id in seen_chunk_ids:
                raise InvalidArgumentError(f"line {lineno}: duplicate chunk_id {chunk_id!r}")
            seen_chunk_ids.add(chunk_id)
            chunks.append(DatasetChunk(chunk_id, session_id, ts, turns))
        elif kind == "question":
            qid = str(_require(record, "qid", lineno))
            if qid in seen_qids:
                raise InvalidArgumentError(f"line {lineno}: duplicate qid {qid!r}")
            seen_qids.add(qid)
            text = _require(record, "text", lineno)
            if not isinstance(text, str) or not text.strip():
                raise InvalidArgumentError(f"line {lineno}: text must be non-empty")
            questions.append(DatasetQuestion(
                qid=qid,
                ts=parse_ts(_require(record, "ts", lineno)),
                text=text,
                evidence_session_ids=_parse_id_list(
                    record.get("evidence_session_ids", []),
                    "evidence_session_ids", lineno, allow_empty=True),
                evidence_chunk_ids=_parse_id_list(
                    _require(record, "evidence_chunk_ids", lineno),
                    "evidence_chunk_ids", lineno, allow_empty=False),
                answer=record.get("answer"),
            ))
        else:
            raise InvalidArgumentError(f"line {lineno}: unknown record type {kind!r}")

    if not chunks:
        raise InvalidArgumentError(f"dataset {path.name} has no chunks")
    unknown = [
        (q.qid, cid) for q in questions for cid in q.evidence_chunk_ids
        if cid not in seen_chunk_ids
    ]
    if unknown:
        qid, cid = unknown[0]
        raise InvalidArgumentError(
            f"question {qid!r} cites unknown evidence chunk {cid!r}")
    return TranscriptDataset(path.name, chunks, questions)


@dataclass
class QuestionResult:
    qid: str
    hit: bool
    n_candidates: int
    k_r: int
    t_r_ms: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class BenchReport:
    dataset: str
    top_k: int
    n_sessions: int
    n_chunks: int
    n_questions: int
    recall_at_k: float
    k_r_mean: float
    k_g_mean: float
    t_r_ms_mean: float
    t_g_ms_mean: float
    questions: list[QuestionResult] = field(default_factory=list)

    def to_dict(self, mask_timing: bool = False) -> dict:
        body = {
            "dataset": self.dataset,
            "top_k": self.top_k,
            "n_sessions": self.n_sessions,
            "n_chunks": self.n_chunks,
            "n_questions": self.n_questions,
            "recall_at_k": self.recall_at_k,
            "k_r_mean": self.k_r_mean,
            "k_g_mean": self.k_g_mean,
            "t_r_ms_mean": self.t_r_ms_mean,
            "t_g_ms_mean": self.t_g_ms_mean,
            "questions": [q.to_dict() for q in self.questions],
        }
        if mask_timing:
            for key in TIMING_FIELDS:
                body.pop(key, None)
            for row in body["questions"]:
                for key in TIMING_FIELDS:
                    row.pop(key, None)
        return body

    def to_json(self, mask_timing: bool = False) -> str:
        return json.dumps(self.to_dict(mask_timing), sort_keys=True, indent=2) + "\n"


def _mean(values: list[float]) -> float:
    return statistics.fmean(values) if values else 0.0


def run_bench(dataset: TranscriptDataset, config: EngineConfig | None = None,
              top_k: int | None = None, data_dir: str | None = None) -> BenchReport:
    """Ingest the transcript into a fresh engine, then answer every question.

    The engine lives in ``data_dir`` (a throwaway temp directory when None),
    so repeated runs never see each other's state.
    """
    config = config or EngineConfig()
    tmp: tempfile.TemporaryDirectory | None = None
    if data_dir is None:
        tmp = tempfile.TemporaryDirectory(prefix="hiermem-bench-")
        data_dir = tmp.name
    config = replace(config, storage=replace(config.storage, data_dir=data_dir))
    effective_top_k = top_k if top_k is not None else config.retrieval.top_k

    try:
        with MemoryEngine(config) as engine:
            chunk_map: dict[str, str] = {}
            ingest_tokens: dict[str, int] = {}
            ingest_ms: dict[str, float] = {}
            for chunk in dataset.chunks:
                report = engine.ingest(IngestRequest(
                    session_id=chunk.session_id, speaker_turns=chunk.turns,
                    ts=chunk.ts, idempotency_key=chunk.chunk_id))
                chunk_map[chunk.chunk_id] = report.chunk_id
                ingest_tokens[chunk.session_id] = (
                    ingest_tokens.get(chunk.session_id, 0) + report.tokens_estimate)
                ingest_ms[chunk.session_id] = (
                    ingest_ms.get(chunk.session_id, 0.0) + report.elapsed_ms)

            rows: list[QuestionResult] = []
            for q in dataset.questions:
                result = engine.query(Query(text=q.text, ts=q.ts, top_k=top_k))
                retrieved = {cid for cid, _sid, _ts, _text in result.context.dialogue}
                hit = any(chunk_map.get(eid) in retrieved for eid in q.evidence_chunk_ids)
                rows.append(QuestionResult(
                    qid=q.qid, hit=hit, n_candidates=len(result.candidates),
                    k_r=result.context.token_estimate, t_r_ms=result.elapsed_ms))

            hits = sum(1 for r in rows if r.hit)
            return BenchReport(
                dataset=dataset.name,
                top_k=effective_top_k,
                n_sessions=len(dataset.session_ids),
                n_chunks=len(dataset.chunks),
                n_questions=len(dataset.questions),
                recall_at_k=(hits / len(rows)) if rows else 0.0,
                k_r_mean=_mean([float(r.k_r) for r in rows]),
                k_g_mean=_mean([float(t) for t in ingest_tokens.values()]),
                t_r_ms_mean=_mean([r.t_r_ms for r in rows]),
                t_g_ms_mean=_mean(list(ingest_ms.values())),
                questions=rows,
            )
    finally:
        if tmp is not None:
            tmp.cleanup()
