from __future__ import annotations

import pytest

from conftest import write_jsonl
from groundcite.corpus import Corpus, CorpusFormatError, Passage, load_corpus, save_corpus


def test_load_corpus_in_file_order(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_jsonl(
        path,
        [
            {"id": "a", "title": "A", "text": "first"},
            {"id": "b", "text": "second"},
            {"id": "c", "title": "", "text": "third"},
        ],
    )
    corpus = load_corpus(path)
    assert len(corpus) == 3
    assert [p.id for p in corpus] == ["a", "b", "c"]
    assert corpus.lookup("b").title == ""
    assert corpus.lookup("b").text == "second"


def test_duplicate_id_names_the_id(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_jsonl(
        path,
        [
            {"id": "p1", "text": "x"},
            {"id": "p2", "text": "y"},
            {"id": "p1", "text": "z"},
        ],
    )
    with pytest.raises(CorpusFormatError, match="'p1'"):
        load_corpus(path)


def test_malformed_line_carries_line_number(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"id": "a", "text": "ok"}\nnot json\n', encoding="utf-8")
    with pytest.raises(CorpusFormatError, match=":2:"):
        load_corpus(path)


def test_missing_text_field_carries_line_number(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"id": "a"}\n', encoding="utf-8")
    with pytest.raises(CorpusFormatError, match=":1:"):
        load_corpus(path)


def test_empty_text_rejected(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_jsonl(path, [{"id": "a", "text": "   "}])
    with pytest.raises(CorpusFormatError, match=":1:"):
        load_corpus(path)


def test_empty_file_yields_empty_corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text("", encoding="utf-8")
    corpus = load_corpus(path)
    assert len(corpus) == 0


def test_lookup_unknown_id():
    corpus = Corpus([Passage(id="a", title="", text="x")])
    with pytest.raises(KeyError, match="'zzz'"):
        corpus.lookup("zzz")
    assert "a" in corpus
    assert "zzz" not in corpus


def test_save_load_round_trip(tmp_path):
    corpus = Corpus(
        [
            Passage(id="a", title="T", text="body text"),
            Passage(id="b", title="", text="unicode: café"),
        ]
    )
    path = tmp_path / "copy.jsonl"
    save_corpus(corpus, path)
    loaded = load_corpus(path)
    assert [(p.id, p.title, p.text) for p in loaded] == [(p.id, p.title, p.text) for p in corpus]
