"""Passage corpus loading and lookup.

A corpus is an ordered collection of text passages, each with a unique id,
an optional title, and a non-empty body. Corpora are loaded from JSONL
files (one object per line with fields "id", "title" (optional), "text").
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator


class CorpusFormatError(ValueError):
    """Raised when a corpus file or passage record is malformed."""


@dataclass(frozen=True)
class Passage:
    """One corpus document unit."""

    id: str
    title: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusFormatError("passage id must be a non-empty string")
        if not self.text.strip():
            raise CorpusFormatError(f"passage {self.id!r} has empty text")


class Corpus:
    """An ordered, id-indexed collection of passages.

    Passage ids are unique; `lookup` resolves an id to its passage.
    """

    def __init__(self, passages: list[Passage]) -> None:
        by_id: dict[str, Passage] = {}
        for p in passages:
            if p.id in by_id:
                raise CorpusFormatError(f"duplicate passage id {p.id!r}")
            by_id[p.id] = p
        self.passages: tuple[Passage, ...] = tuple(passages)
        self._by_id = by_id

    def lookup(self, passage_id: str) -> Passage:
        try:
            return self._by_id[passage_id]
        except KeyError:
            raise KeyError(f"unknown passage id {passage_id!r}") from None

    def __contains__(self, passage_id: str) -> bool:
        return passage_id in self._by_id

    def __len__(self) -> int:
        return len(self.passages)

    def __iter__(self) -> Iterator[Passage]:
        return iter(self.passages)


def load_corpus(path: str | Path) -> Corpus:
    """Load a corpus from a JSONL file.

    Each line must be a JSON object with string fields "id" and "text";
    "title" is optional and defaults to "". Errors carry the offending
    line number; duplicate ids name the id. An empty file yields an
    empty corpus.
    """
    path = Path(path)
    passages: list[Passage] = []
    seen_lines: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise CorpusFormatError(f"{path}:{lineno}: expected a JSON object")
            try:
                pid = record["id"]
                text = record["text"]
            except KeyError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: missing field {exc}") from exc
            title = record.get("title", "")
            if not isinstance(pid, str) or not isinstance(text, str) or not isinstance(title, str):
                raise CorpusFormatError(f"{path}:{lineno}: id, title, and text must be strings")
            if pid in seen_lines:
                raise CorpusFormatError(
                    f"{path}:{lineno}: duplicate passage id {pid!r} (first seen on line {seen_lines[pid]})"
                )
            try:
                passage = Passage(id=pid, title=title, text=text)
            except CorpusFormatError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from exc
            seen_lines[pid] = lineno
            passages.append(passage)
    return Corpus(passages)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back out as JSONL (used when persisting an index)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for p in corpus:
            fh.write(json.dumps({"id": p.id, "title": p.title, "text": p.text}, ensure_ascii=False))
            fh.write("\n")
