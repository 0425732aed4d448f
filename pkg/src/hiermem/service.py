"""HTTP JSON API over one engine instance.

Validation is done by hand (not by response-model magic) so the error bodies
stay small and precise: every 400 names the offending field. Writes go
through the engine's single-writer pipeline; reads hit committed snapshots,
so queries keep answering while an ingestion is in flight.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .engine import MemoryEngine
from .errors import (
    BackendError,
    ExtractionError,
    InvalidArgumentError,
    NotFoundError,
    PersistenceError,
)
from .retrieve import Query
from .textkit import parse_ts

logger = logging.getLogger(__name__)


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _parse_query_payload(payload) -> Query:
    if not isinstance(payload, dict):
        raise InvalidArgumentError("request body must be a JSON object")
    text = payload.get("text")
    if not text or not isinstance(text, str):
        raise InvalidArgumentError("text: required non-empty string")
    known = {"text", "ts", "top_k", "budget_tokens"}
    for key in payload:
        if key not in known:
            raise InvalidArgumentError(f"{key}: unknown field")
    ts = payload.get("ts")
    if ts is not None:
        try:
            ts = parse_ts(ts)
        except InvalidArgumentError as exc:
            raise InvalidArgumentError(f"ts: {exc}") from None
    top_k = payload.get("top_k")
    if top_k is not None and (isinstance(top_k, bool) or not isinstance(top_k, int)):
        raise InvalidArgumentError("top_k: must be an integer")
    budget = payload.get("budget_tokens")
    if budget is not None and (isinstance(budget, bool) or not isinstance(budget, int)):
        raise InvalidArgumentError("budget_tokens: must be an integer")
    return Query(text=text, ts=ts, top_k=top_k, budget_tokens=budget)


def create_app(engine: MemoryEngine) -> FastAPI:
    app = FastAPI(title="hiermem", docs_url=None, redoc_url=None)

    @app.post("/v1/memories")
    async def ingest_memory(request: Request):
        try:
            payload = await request.json()
        except Exception:
            return _error(400, "body must be valid JSON")
        try:
            report = engine.ingest(payload)
        except InvalidArgumentError as exc:
            return _error(400, str(exc))
        except (BackendError, ExtractionError) as exc:
            logger.warning("ingest rejected by backend: %s", exc)
            return _error(503, str(exc))
        except PersistenceError as exc:
            logger.error("ingest lost to storage failure: %s", exc)
            return _error(500, str(exc))
        return JSONResponse(status_code=200, content=report.to_dict())

    @app.post("/v1/query")
    async def run_query(request: Request):
        try:
            payload = await request.json()
        except Exception:
            return _error(400, "body must be valid JSON")
        try:
            query = _parse_query_payload(payload)
            result = engine.query(query)
        except InvalidArgumentError as exc:
            return _error(400, str(exc))
        except (BackendError, ExtractionError) as exc:
            logger.warning("query rejected by backend: %s", exc)
            return _error(503, str(exc))
        return JSONResponse(status_code=200, content=result.to_dict())

    @app.get("/v1/sessions/{session_id}")
    async def get_session(session_id: str):
        try:
            view = engine.session_view(session_id)
        except NotFoundError as exc:
            return _error(404, str(exc))
        return JSONResponse(status_code=200, content=view)

    @app.get("/v1/stats")
    async def get_stats():
        return JSONResponse(status_code=200, content=engine.stats())

    return app


def serve(engine: MemoryEngine, host: str | None = None, port: int | None = None) -> None:
    """Run the API under uvicorn; blocks until interrupted."""
    import uvicorn

    uvicorn.run(create_app(engine),
                host=host or engine.config.service.host,
                port=port or engine.config.service.port,
                log_level="info")
