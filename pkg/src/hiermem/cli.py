"""Command line front end.

Exit codes: 0 success, 1 validation/config problem, 2 storage or backend
failure. Machine-readable output goes to stdout, progress notes to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import load_transcript, run_bench
from .config import EngineConfig, load_config
from .engine import LOG_FILENAME, SNAPSHOT_DIRNAME, MemoryEngine
from .errors import (
    BackendError,
    ConfigError,
    ExtractionError,
    InvalidArgumentError,
    NotFoundError,
    PersistenceError,
)
from .graph import MemoryGraph
from .ingest import IngestRequest
from .persistence import canonical_json, recover, scan_log, snapshot_to_obj
from .retrieve import Query
from .textkit import parse_ts


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we want exit code 1
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="hiermem", description="Hierarchical memory engine for dialogue agents")
    parser.add_argument("--config", help="path to a JSON or YAML config file")
    parser.add_argument("--data-dir", help="override storage.data_dir")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest a JSONL file of dialogue chunks")
    p.add_argument("file", help="JSONL file; each line a chunk record")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("query", help="retrieve structured context for a question")
    p.add_argument("text", help="the question")
    p.add_argument("--ts", help="query timestamp (epoch seconds or ISO-8601)")
    p.add_argument("--top-k", type=int, help="candidate budget override")
    p.add_argument("--json", action="store_true", help="print the full result object")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--host", help="bind address (default from config)")
    p.add_argument("--port", type=int, help="port (default from config)")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("bench", help="run the retrieval benchmark on a dataset")
    p.add_argument("dataset", help="JSONL transcript dataset")
    p.add_argument("--report", help="also write the report JSON to this path")
    p.add_argument("--top-k", type=int, help="candidate budget override")
    p.add_argument("--mask-timing", action="store_true",
                   help="omit latency fields (stable across runs)")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("dump", help="inspect persisted state")
    p.add_argument("--format", choices=("log", "snapshot", "dot"), default="log")
    p.set_defaults(fn=cmd_dump)

    return parser


def _load_engine_config(args) -> EngineConfig:
    config = load_config(args.config) if args.config else EngineConfig()
    if args.data_dir:
        config.storage.data_dir = args.data_dir
    return config


def cmd_ingest(args) -> int:
    config = _load_engine_config(args)
    path = Path(args.file)
    lines = path.read_text(encoding="utf-8").splitlines()
    per_session: dict[str, int] = {}
    skipped = 0
    with MemoryEngine(config) as engine:
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidArgumentError(f"line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise InvalidArgumentError(f"line {lineno}: expected an object")
            if record.get("type") not in (None, "chunk"):
                skipped += 1
                continue
            try:
                request = IngestRequest.from_dict(record)
            except InvalidArgumentError as exc:
                raise InvalidArgumentError(f"line {lineno}: {exc}") from exc
            if request.idempotency_key is None:
                ordinal = per_session.get(request.session_id, 0)
                key = record.get("chunk_id") or f"{request.session_id}#{ordinal}"
                request = IngestRequest(request.session_id, request.speaker_turns,
                                        request.ts, key)
            per_session[request.session_id] = per_session.get(request.session_id, 0) + 1
            report = engine.ingest(request)
            print(json.dumps(report.to_dict(), sort_keys=True))
    if skipped:
        print(f"skipped {skipped} non-chunk records", file=sys.stderr)
    return 0


def cmd_query(args) -> int:
    config = _load_engine_config(args)
    ts = parse_ts(args.ts) if args.ts is not None else None
    with MemoryEngine(config) as engine:
        result = engine.query(Query(text=args.text, ts=ts, top_k=args.top_k))
    if args.json:
        print(json.dumps(result.to_dict(), sort_keys=True, indent=2))
    else:
        print(result.context.render())
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    config = _load_engine_config(args)
    engine = MemoryEngine(config)
    try:
        serve(engine, args.host, args.port)
    finally:
        engine.close()
    return 0


def cmd_bench(args) -> int:
    config = _load_engine_config(args)
    dataset = load_transcript(args.dataset)
    report = run_bench(dataset, config, top_k=args.top_k)
    body = report.to_json(mask_timing=args.mask_timing)
    print(body, end="")
    if args.report:
        Path(args.report).write_text(body, encoding="utf-8")
    return 0


def cmd_dump(args) -> int:
    config = _load_engine_config(args)
    data_dir = Path(config.storage.data_dir)
    log_path = data_dir / LOG_FILENAME
    if args.format == "log":
        scan = scan_log(log_path)
        for ev in scan.events:
            print(canonical_json({
                "seq": ev.seq, "txn": ev.txn, "commit": ev.commit,
                "kind": ev.kind, "wall_ts": ev.wall_ts, "payload": ev.payload,
            }))
        return 0

    graph = MemoryGraph()
    recover(graph, log_path, data_dir / SNAPSHOT_DIRNAME, config.backend.dim)
    snap = graph.snapshot()
    if args.format == "snapshot":
        print(json.dumps(snapshot_to_obj(snap, config.backend.dim),
                         sort_keys=True, indent=2))
        return 0

    # dot: entity-relation view for graphviz
    def quote(s: str) -> str:
        return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'

    print("digraph memory {")
    print("  rankdir=LR;")
    for eid in sorted(snap.entities):
        entity = snap.entities[eid]
        print(f"  {quote(eid)} [label={quote(entity.name)}];")
    for tid in sorted(snap.triples):
        t = snap.triples[tid]
        print(f"  {quote(t.subject_id)} -> {quote(t.object_id)} "
              f"[label={quote(t.relation)}];")
    print("}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except (InvalidArgumentError, ConfigError, NotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PersistenceError, BackendError, ExtractionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
