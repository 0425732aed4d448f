"""Offline backend: rule-based extraction and feature-hash embeddings.

Every operation is a pure function of (input, seed) and agrees bitwise across
runs and platforms, which is what the property tests and the benchmark
harness rely on. The heuristics are intentionally simple:

- entities: capitalized token runs (month/year runs typed "time"), plus
  frequent lowercase tokens typed "topic";
- triples: per sentence, first entity + the token span to the next entity
  (leading stopwords dropped) + that entity;
- summary: the most entity-dense sentence, appended to the prior summary;
  keys accumulate across refinements;
- embedding: seeded feature hashing of word 1/2-grams into a fixed-dimension
  unit vector (blake2b keyed by the seed, sign bit from the hash).
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

from ..errors import InvalidArgumentError
from ..textkit import STOPWORDS, canonicalize, is_time_token, sentences, words
from .base import EmbeddingCache, ExtractedTriple, require_text

DEFAULT_DIM = 256
DEFAULT_MAX_SUMMARY_CHARS = 480
MAX_KEYS = 32

_CAP_RE = re.compile(r"^[A-Z][A-Za-z0-9']*$")
_DIGIT_RE = re.compile(r"\d")
_GRAM_RE = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)?")


def _is_entity_token(token: str) -> bool:
    if token.lower() in STOPWORDS:
        return False
    return bool(_CAP_RE.match(token)) or bool(_DIGIT_RE.search(token))


def _entity_runs(sentence_tokens: list[str]) -> list[tuple[int, int, str]]:
    """Maximal runs of entity tokens: (start, end, type)."""
    runs = []
    i = 0
    n = len(sentence_tokens)
    while i < n:
        if _is_entity_token(sentence_tokens[i]):
            j = i
            while j + 1 < n and _is_entity_token(sentence_tokens[j + 1]):
                j += 1
            kind = "time" if any(is_time_token(t) for t in sentence_tokens[i:j + 1]) else "other"
            runs.append((i, j, kind))
            i = j + 1
        else:
            i += 1
    return runs


def hash_embedding(text: str, dim: int, seed: int) -> np.ndarray:
    """Signed feature hashing of lowercased word 1/2-grams, L2-normalized.

    Texts with no word tokens hash their raw bytes as a single feature so the
    result is always unit-norm.
    """
    tokens = _GRAM_RE.findall(text.lower())
    grams = list(tokens)
    grams.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    if not grams:
        grams = [f"\x00raw:{text}"]
    key = seed.to_bytes(8, "little", signed=True)
    vec = np.zeros(dim, dtype=np.float64)
    for gram in grams:
        digest = hashlib.blake2b(gram.encode("utf-8"), key=key, digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        sign = 1.0 if h & 1 == 0 else -1.0
        vec[(h >> 1) % dim] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        vec[0] = 1.0
        norm = 1.0
    vec = vec / norm
    vec.setflags(write=False)
    return vec


class DeterministicBackend:
    """Seeded, offline implementation of the backend interface."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0,
                 max_summary_chars: int = DEFAULT_MAX_SUMMARY_CHARS):
        if dim < 1:
            raise InvalidArgumentError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed
        self.max_summary_chars = max_summary_chars
        self._cache = EmbeddingCache()

    # -- embedding ----------------------------------------------------------

    def embed(self, text: str) -> np.ndarray:
        require_text(text)
        return self._cache.get_or_compute(
            text, lambda t: hash_embedding(t, self.dim, self.seed))

    # -- entities -----------------------------------------------------------

    def extract_entities(self, text: str) -> list[tuple[str, str]]:
        require_text(text)
        found: dict[str, tuple[str, str]] = {}
        for sentence in sentences(text):
            tokens = words(sentence)
            for start, end, kind in _entity_runs(tokens):
                name = " ".join(tokens[start:end + 1])
                found.setdefault(canonicalize(name), (name, kind))
        counts: dict[str, int] = {}
        for token in words(text):
            low = token.lower()
            if len(low) >= 3 and low not in STOPWORDS and not _DIGIT_RE.search(low):
                counts[low] = counts.get(low, 0) + 1
        for low, count in counts.items():
            if count >= 3:
                found.setdefault(low, (low, "topic"))
        return list(found.values())

    # -- triples ------------------------------------------------------------

    def extract_triples(self, text: str) -> list[ExtractedTriple]:
        require_text(text)
        out = []
        for sentence in sentences(text):
            tokens = words(sentence)
            runs = _entity_runs(tokens)
            if len(runs) < 2:
                continue
            (s_start, s_end, s_kind), (o_start, o_end, o_kind) = runs[0], runs[1]
            between = tokens[s_end + 1:o_start]
            while between and between[0].lower() in STOPWORDS:
                between = between[1:]
            relation = canonicalize(" ".join(between))
            if not relation:
                continue
            out.append(ExtractedTriple(
                subject=" ".join(tokens[s_start:s_end + 1]),
                relation=relation,
                object=" ".join(tokens[o_start:o_end + 1]),
                subject_type=s_kind, object_type=o_kind,
            ))
        return out

    # -- summary ------------------------------------------------------------

    def summarize(self, text: str, prior_summary: str | None = None,
                  prior_keys=None) -> tuple[str, frozenset[str]]:
        require_text(text)
        parts = sentences(text)
        best, best_score = parts[0] if parts else text.strip(), -1
        for idx, sentence in enumerate(parts):
            score = len(_entity_runs(words(sentence)))
            if score > best_score:
                best, best_score = sentence, score
        if prior_summary and canonicalize(best) and canonicalize(best) in canonicalize(prior_summary):
            summary = prior_summary  # this fact is already in the summary
        else:
            summary = f"{prior_summary} {best}." if prior_summary else f"{best}."
        while len(summary) > self.max_summary_chars:
            clipped = sentences(summary)[1:]
            if not clipped:
                summary = summary[-self.max_summary_chars:]
                break
            summary = ". ".join(clipped) + "."

        keys: list[str] = []
        for name, _kind in self.extract_entities(text):
            for word in canonicalize(name).split():
                if word not in STOPWORDS and len(word) >= 2 and word not in keys:
                    keys.append(word)
        if prior_keys:
            for key in sorted(prior_keys):
                if key not in keys:
                    keys.append(key)
        if not keys:
            fallback = next((w.lower() for w in words(text)), "general")
            keys.append(fallback)
        return summary, frozenset(keys[:MAX_KEYS])
