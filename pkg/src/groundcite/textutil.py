"""Small text helpers shared by the oracle scorer and the metrics."""

from __future__ import annotations

import re

_PUNCT_RE = re.compile(r"[^\w\s]|_", re.UNICODE)
_CITATION_RE = re.compile(r"\s*\[\d+\]")


def normalize(text: str) -> str:
    """Lowercase, strip punctuation, and collapse whitespace."""
    return " ".join(_PUNCT_RE.sub(" ", text.lower()).split())


def strip_citation_markers(text: str) -> str:
    """Remove inline [n] markers, tidying whitespace left behind."""
    return " ".join(_CITATION_RE.sub("", text).split())
