"""Remote LLM backend over an OpenAI-compatible HTTP API.

Chat completions drive summarize/entities/triples with the prompt templates
in ``templates/``; the embeddings endpoint supplies vectors. Responses use a
strict pipe-delimited line format so parsing stays cheap and malformed lines
can simply be dropped. Requests are idempotent, retried up to MAX_RETRIES
times with exponential backoff, and bounded by a concurrency semaphore.
"""

from __future__ import annotations

import importlib.resources
import logging
import os
import threading
import time

import numpy as np
import requests

from ..errors import BackendError, ExtractionError
from .base import EmbeddingCache, ExtractedTriple, require_text
from ..graph import ENTITY_TYPES

logger = logging.getLogger(__name__)

MAX_RETRIES = 3
BACKOFF_BASE_S = 0.5
RETRYABLE_STATUS = {429, 500, 502, 503, 504}


def load_template(name: str) -> str:
    """Read a prompt template, dropping version-comment header lines."""
    ref = importlib.resources.files("hiermem.backends").joinpath(f"templates/{name}.txt")
    raw = ref.read_text(encoding="utf-8")
    lines = [ln for ln in raw.splitlines() if not ln.startswith("#")]
    return "\n".join(lines).strip() + "\n"


class RemoteBackend:
    """Backend that delegates to a remote model service.

    ``transport(url, payload, headers, timeout_s) -> dict`` may be injected
    for testing; the default posts JSON via requests.
    """

    def __init__(self, endpoint: str, model: str, dim: int,
                 api_key_env: str = "HIERMEM_API_KEY", timeout_ms: int = 30000,
                 max_concurrency: int = 4, transport=None):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.dim = dim
        self.timeout_s = timeout_ms / 1000.0
        self.api_key = os.environ.get(api_key_env, "")
        self._sem = threading.Semaphore(max_concurrency)
        self._transport = transport or self._http_post
        self._cache = EmbeddingCache()
        self._templates = {name: load_template(name)
                           for name in ("summarize", "entities", "triples")}

    # -- transport ----------------------------------------------------------

    def _http_post(self, url: str, payload: dict, headers: dict, timeout_s: float) -> dict:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout_s)
        if resp.status_code in RETRYABLE_STATUS:
            raise BackendError(f"{url} returned {resp.status_code}")
        if resp.status_code != 200:
            raise ExtractionError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.endpoint}{path}"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = None
        with self._sem:
            for attempt in range(MAX_RETRIES + 1):
                try:
                    return self._transport(url, payload, headers, self.timeout_s)
                except ExtractionError:
                    raise
                except Exception as exc:
                    last_error = exc
                    if attempt < MAX_RETRIES:
                        delay = BACKOFF_BASE_S * (2 ** attempt)
                        logger.warning("backend call failed (%s), retry %d/%d in %.1fs",
                                       exc, attempt + 1, MAX_RETRIES, delay)
                        time.sleep(delay)
        raise BackendError(f"backend unreachable after {MAX_RETRIES} retries: {last_error}")

    def _complete(self, prompt: str) -> str:
        body = self._post("/chat/completions", {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        })
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ExtractionError(f"malformed completion response: {exc}") from exc
        if not text or not text.strip():
            raise ExtractionError("empty model output")
        return text

    # -- backend interface --------------------------------------------------

    def summarize(self, text: str, prior_summary: str | None = None,
                  prior_keys=None) -> tuple[str, frozenset[str]]:
        require_text(text)
        prompt = self._templates["summarize"].format(
            text=text,
            prior_summary=prior_summary or "(none)",
            prior_keys=", ".join(sorted(prior_keys)) if prior_keys else "(none)",
        )
        reply = self._complete(prompt)
        summary, keys = "", []
        for line in reply.splitlines():
            line = line.strip()
            if line.upper().startswith("SUMMARY:"):
                summary = line[len("SUMMARY:"):].strip()
            elif line.upper().startswith("KEYS:"):
                keys = [k.strip().lower() for k in line[len("KEYS:"):].split(",") if k.strip()]
        if not summary or not keys:
            raise ExtractionError("model reply missing SUMMARY or KEYS line")
        return summary, frozenset(keys)

    def extract_entities(self, text: str) -> list[tuple[str, str]]:
        require_text(text)
        reply = self._complete(self._templates["entities"].format(text=text))
        out, seen = [], set()
        for line in reply.splitlines():
            parts = [p.strip() for p in line.split("|")]
            if len(parts) != 2 or not parts[0]:
                continue
            kind = parts[1].lower() if parts[1].lower() in ENTITY_TYPES else "other"
            key = parts[0].lower()
            if key not in seen:
                seen.add(key)
                out.append((parts[0], kind))
        return out

    def extract_triples(self, text: str) -> list[ExtractedTriple]:
        require_text(text)
        reply = self._complete(self._templates["triples"].format(text=text))
        out = []
        for line in reply.splitlines():
            parts = [p.strip() for p in line.split("|")]
            if len(parts) != 5 or not all(parts[:3]):
                continue  # malformed line: skip, keep the rest
            stype = parts[3].lower() if parts[3].lower() in ENTITY_TYPES else "other"
            otype = parts[4].lower() if parts[4].lower() in ENTITY_TYPES else "other"
            out.append(ExtractedTriple(parts[0], parts[1], parts[2], stype, otype))
        return out

    def embed(self, text: str) -> np.ndarray:
        require_text(text)
        return self._cache.get_or_compute(text, self._embed_uncached)

    def _embed_uncached(self, text: str) -> np.ndarray:
        body = self._post("/embeddings", {"model": self.model, "input": text})
        try:
            values = body["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ExtractionError(f"malformed embedding response: {exc}") from exc
        vec = np.asarray(values, dtype=np.float64)
        if vec.ndim != 1 or vec.size != self.dim:
            raise BackendError(f"embedding dimension {vec.size} != configured {self.dim}")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ExtractionError("zero embedding from backend")
        vec = vec / norm
        vec.setflags(write=False)
        return vec
