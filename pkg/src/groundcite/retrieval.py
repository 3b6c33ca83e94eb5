"""Lexical passage retrieval over an inverted index.

Scoring is BM25 (k1=1.2, b=0.75) with a Lucene-style non-negative idf,
ln(1 + (N - df + 0.5) / (df + 0.5)), so hit scores are always >= 0 and
zero-score passages are never returned. Tokenization lowercases and
splits on non-alphanumeric boundaries; no stemming, no stopwords.

An index is persisted as a directory with a format-version file; the
serialization is deterministic, so indexing the same corpus twice
produces byte-identical artifacts. Ranking ties are broken by ascending
passage id, which makes retrieve(q, k) a strict prefix of
retrieve(q, k+1).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus, Passage, load_corpus, save_corpus

INDEX_FORMAT_VERSION = "1"

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split into maximal alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class IndexParams:
    k1: float = 1.2
    b: float = 0.75


@dataclass(frozen=True)
class RetrievalHit:
    passage_id: str
    score: float
    rank: int


class Index:
    """Query-ready inverted index over a corpus.

    Immutable once built; `retrieve` may be called concurrently.
    """

    def __init__(
        self,
        corpus: Corpus,
        params: IndexParams,
        postings: dict[str, list[tuple[int, int]]],
        doc_lengths: list[int],
    ) -> None:
        self.corpus = corpus
        self.params = params
        self._postings = postings
        self._doc_lengths = doc_lengths
        self._avgdl = (sum(doc_lengths) / len(doc_lengths)) if doc_lengths else 0.0

    def retrieve(self, query: str, top_k: int) -> list[RetrievalHit]:
        return retrieve(self, query, top_k)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        (path / "format-version").write_text(INDEX_FORMAT_VERSION + "\n", encoding="utf-8")
        meta = {
            "k1": self.params.k1,
            "b": self.params.b,
            "num_passages": len(self.corpus),
        }
        (path / "meta.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        # Postings store raw term frequencies; scores are computed at query
        # time, so the on-disk artifact contains no floats.
        serializable = {tok: [[i, tf] for i, tf in plist] for tok, plist in self._postings.items()}
        (path / "postings.json").write_text(
            json.dumps(serializable, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="utf-8",
        )
        (path / "doc-lengths.json").write_text(
            json.dumps(self._doc_lengths, separators=(",", ":")) + "\n", encoding="utf-8"
        )
        save_corpus(self.corpus, path / "passages.jsonl")


def _passage_tokens(passage: Passage) -> list[str]:
    return tokenize(passage.title + " " + passage.text)


def build_index(corpus: Corpus, params: IndexParams = IndexParams()) -> Index:
    """Build an inverted index over title + text of every passage."""
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    for pos, passage in enumerate(corpus):
        tokens = _passage_tokens(passage)
        doc_lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for tok in sorted(counts):
            postings.setdefault(tok, []).append((pos, counts[tok]))
    return Index(corpus, params, postings, doc_lengths)


def load_index(path: str | Path) -> Index:
    path = Path(path)
    version_file = path / "format-version"
    if not version_file.exists():
        raise FileNotFoundError(f"{path} is not an index directory (no format-version file)")
    version = version_file.read_text(encoding="utf-8").strip()
    if version != INDEX_FORMAT_VERSION:
        raise ValueError(f"unsupported index format version {version!r} (expected {INDEX_FORMAT_VERSION!r})")
    meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    params = IndexParams(k1=meta["k1"], b=meta["b"])
    corpus = load_corpus(path / "passages.jsonl")
    raw_postings = json.loads((path / "postings.json").read_text(encoding="utf-8"))
    postings = {tok: [(int(i), int(tf)) for i, tf in plist] for tok, plist in raw_postings.items()}
    doc_lengths = [int(x) for x in json.loads((path / "doc-lengths.json").read_text(encoding="utf-8"))]
    return Index(corpus, params, postings, doc_lengths)


def retrieve(index: Index, query: str, top_k: int) -> list[RetrievalHit]:
    """Return at most top_k hits, best first.

    Sorting is by score descending then passage id ascending; only
    passages matching at least one query token appear. Repeated query
    tokens contribute once per occurrence.
    """
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    if top_k <= 0:
        raise ValueError("top_k must be positive")
    n_docs = len(index.corpus)
    if n_docs == 0:
        return []
    k1, b = index.params.k1, index.params.b
    avgdl = index._avgdl or 1.0
    scores: dict[int, float] = {}
    for tok in tokenize(query):
        plist = index._postings.get(tok)
        if not plist:
            continue
        df = len(plist)
        idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
        for pos, tf in plist:
            norm = tf + k1 * (1.0 - b + b * index._doc_lengths[pos] / avgdl)
            scores[pos] = scores.get(pos, 0.0) + idf * tf * (k1 + 1.0) / norm
    ranked = sorted(
        ((pos, score) for pos, score in scores.items() if score > 0.0),
        key=lambda item: (-item[1], index.corpus.passages[item[0]].id),
    )
    return [
        RetrievalHit(passage_id=index.corpus.passages[pos].id, score=score, rank=rank)
        for rank, (pos, score) in enumerate(ranked[:top_k], start=1)
    ]
