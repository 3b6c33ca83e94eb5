"""Shared fixtures: tiny corpora, indexes, and scorer doubles."""

from __future__ import annotations

import json

import pytest

from groundcite.corpus import Corpus, Passage
from groundcite.retrieval import build_index


@pytest.fixture
def tiny_corpus() -> Corpus:
    return Corpus(
        [
            Passage(id="p1", title="Waves", text="The largest wave was recorded in Lituya Bay."),
            Passage(id="p2", title="Rivers", text="The Nile is the longest river in Africa."),
            Passage(id="p3", title="Mountains", text="Everest is the tallest mountain on Earth."),
        ]
    )


@pytest.fixture
def tiny_index(tiny_corpus):
    return build_index(tiny_corpus)


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
