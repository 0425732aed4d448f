"""Shared text utilities: canonical forms, tokenization, timestamps.

Everything here is deterministic and locale-independent; both the graph
layer and the offline extraction backend build on these primitives.
"""

from __future__ import annotations

import math
import re
from datetime import datetime, timezone

from .errors import InvalidArgumentError

_WS_RE = re.compile(r"\s+")
_WORD_RE = re.compile(r"[A-Za-z0-9]+(?:'[A-Za-z0-9]+)?")
_SENTENCE_SPLIT_RE = re.compile(r"[.!?]+")
_YEAR_RE = re.compile(r"^(19|20)\d\d$")

MONTHS = {
    "january": 1, "february": 2, "march": 3, "april": 4, "may": 5, "june": 6,
    "july": 7, "august": 8, "september": 9, "october": 10, "november": 11,
    "december": 12,
}

# Function words filtered out of keys, entity candidates, and relation heads.
STOPWORDS = frozenset("""
a about above after again all am an and any are aren't as at be because been
before being below between both but by can can't cannot could couldn't did
didn't do does doesn't doing don't down during each few for from further had
hadn't has hasn't have haven't having he he'd he'll he's her here here's hers
herself him himself his how how's i i'd i'll i'm i've if in into is isn't it
it's its itself let's me more most mustn't my myself no nor not of off on once
only or other ought our ours ourselves out over own same shan't she she'd
she'll she's should shouldn't so some such than that that's the their theirs
them themselves then there there's these they they'd they'll they're they've
this those through to too under until up very was wasn't we we'd we'll we're
we've were weren't what what's when when's where where's which while who who's
whom why why's will with won't would wouldn't you you'd you'll you're you've
your yours yourself yourselves yes yeah okay ok hi hello hey
""".split())


def canonicalize(text: str) -> str:
    """Canonical surface form: lowercase, trimmed, inner whitespace collapsed.

    Idempotent: ``canonicalize(canonicalize(x)) == canonicalize(x)``.
    """
    return _WS_RE.sub(" ", text.strip()).lower()


def words(text: str) -> list[str]:
    """Word tokens in order, original casing preserved."""
    return _WORD_RE.findall(text)


def sentences(text: str) -> list[str]:
    """Split on sentence-final punctuation; newlines also break sentences."""
    out = []
    for line in text.splitlines():
        for part in _SENTENCE_SPLIT_RE.split(line):
            part = part.strip()
            if part:
                out.append(part)
    return out


def is_time_token(token: str) -> bool:
    """Month names and plausible 4-digit years read as time markers."""
    low = token.lower()
    return low in MONTHS or bool(_YEAR_RE.match(token))


def render_turns(turns: list[tuple[str, str]]) -> str:
    """Render speaker turns as the chunk text: one "SPEAKER: utterance" line each."""
    return "\n".join(f"{speaker}: {utterance}" for speaker, utterance in turns)


def parse_ts(value) -> int:
    """Parse a timestamp into integer UTC seconds.

    Accepts int/float epoch seconds or an ISO-8601 string (a trailing ``Z``
    is understood; a naive datetime is taken as UTC).
    """
    if isinstance(value, bool):
        raise InvalidArgumentError(f"not a timestamp: {value!r}")
    if isinstance(value, (int, float)):
        if not math.isfinite(value):
            raise InvalidArgumentError(f"not a timestamp: {value!r}")
        return int(value)
    if isinstance(value, str):
        raw = value.strip()
        if not raw:
            raise InvalidArgumentError("empty timestamp")
        try:
            return int(float(raw))
        except ValueError:
            pass
        try:
            dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
        except ValueError as exc:
            raise InvalidArgumentError(f"unparseable timestamp {value!r}") from exc
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp())
    raise InvalidArgumentError(f"not a timestamp: {value!r}")


def iso_ts(ts: int) -> str:
    """Integer UTC seconds -> ISO-8601 with a Z suffix."""
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def estimate_tokens(text: str) -> int:
    """Default token estimate: whitespace-token count x 1.3, rounded up."""
    n = len(text.split())
    return math.ceil(n * 1.3)
