from __future__ import annotations

import math
import random
from collections import Counter

import pytest

from groundcite.corpus import Corpus, Passage
from groundcite.retrieval import (
    IndexParams,
    build_index,
    load_index,
    retrieve,
    tokenize,
)

# Ten-passage fixture with empty titles so scores depend on the body
# tokens alone; lengths and term frequencies vary, and p07/p09 tie.
FIXTURE = [
    ("p01", "alpha beta gamma"),
    ("p02", "alpha alpha beta"),
    ("p03", "alpha delta epsilon zeta"),
    ("p04", "beta beta beta eta"),
    ("p05", "alpha beta alpha beta theta iota"),
    ("p06", "gamma delta"),
    ("p07", "alpha"),
    ("p08", "kappa lambda mu nu"),
    ("p09", "beta"),
    ("p10", "alpha beta alpha beta alpha beta xi omicron pi rho sigma tau"),
]

# Hand-derived ranking for query "alpha beta" (see reference_scores):
# p02 > p05 > p01 > p10 > p04 > p07 = p09 (tie, id order) > p03,
# with p06/p08 unmatched.
EXPECTED_ORDER = ["p02", "p05", "p01", "p10", "p04", "p07", "p09", "p03"]


def fixture_corpus() -> Corpus:
    return Corpus([Passage(id=pid, title="", text=text) for pid, text in FIXTURE])


def reference_scores(query: str, k1: float = 1.2, b: float = 0.75) -> dict[str, float]:
    """Independent BM25 computation, straight from the formula."""
    docs = {pid: (" " + text).lower().split() for pid, text in FIXTURE}
    n = len(docs)
    avgdl = sum(len(toks) for toks in docs.values()) / n
    scores: dict[str, float] = {}
    for term in query.lower().split():
        df = sum(1 for toks in docs.values() if term in toks)
        if df == 0:
            continue
        idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
        for pid, toks in docs.items():
            tf = Counter(toks)[term]
            if tf == 0:
                continue
            denom = tf + k1 * (1 - b + b * len(toks) / avgdl)
            scores[pid] = scores.get(pid, 0.0) + idf * tf * (k1 + 1) / denom
    return scores


class TestTokenize:
    def test_lowercase_and_alnum_runs(self):
        assert tokenize("Hello, World-2!") == ["hello", "world", "2"]

    def test_underscore_is_a_boundary(self):
        assert tokenize("foo_bar") == ["foo", "bar"]

    def test_unicode(self):
        assert tokenize("Café au lait") == ["café", "au", "lait"]


class TestRetrieve:
    def test_unique_term_ranks_first(self, tiny_index):
        hits = retrieve(tiny_index, "Lituya", 3)
        assert hits[0].passage_id == "p1"
        assert hits[0].rank == 1
        assert len(hits) == 1

    def test_title_tokens_are_indexed(self, tiny_index):
        hits = retrieve(tiny_index, "Mountains", 3)
        assert [h.passage_id for h in hits] == ["p3"]

    def test_bounded_by_corpus_size(self, tiny_index):
        hits = retrieve(tiny_index, "the", 5)
        assert len(hits) <= 3

    def test_hand_computed_fixture_order(self):
        index = build_index(fixture_corpus())
        hits = retrieve(index, "alpha beta", 10)
        assert [h.passage_id for h in hits] == EXPECTED_ORDER
        expected = reference_scores("alpha beta")
        for hit in hits:
            assert hit.score == pytest.approx(expected[hit.passage_id], abs=1e-12)
        assert [h.rank for h in hits] == list(range(1, len(hits) + 1))

    def test_scores_non_increasing_and_nonnegative(self):
        index = build_index(fixture_corpus())
        hits = retrieve(index, "alpha beta gamma", 10)
        scores = [h.score for h in hits]
        assert scores == sorted(scores, reverse=True)
        assert all(s > 0 for s in scores)

    def test_tie_break_by_passage_id(self):
        corpus = Corpus(
            [
                Passage(id="z", title="", text="solo token"),
                Passage(id="a", title="", text="solo token"),
            ]
        )
        hits = retrieve(build_index(corpus), "solo", 2)
        assert [h.passage_id for h in hits] == ["a", "z"]
        assert hits[0].score == hits[1].score

    def test_prefix_property(self):
        index = build_index(fixture_corpus())
        rng = random.Random(7)
        vocab = ["alpha", "beta", "gamma", "delta", "kappa", "xi"]
        for _ in range(50):
            query = " ".join(rng.choices(vocab, k=rng.randint(1, 3)))
            for k in range(1, 9):
                small = [h.passage_id for h in retrieve(index, query, k)]
                big = [h.passage_id for h in retrieve(index, query, k + 1)]
                assert big[: len(small)] == small

    def test_pure_function(self):
        index = build_index(fixture_corpus())
        first = retrieve(index, "alpha beta", 5)
        second = retrieve(index, "alpha beta", 5)
        assert first == second

    def test_empty_query_rejected(self, tiny_index):
        with pytest.raises(ValueError):
            retrieve(tiny_index, "", 3)
        with pytest.raises(ValueError):
            retrieve(tiny_index, "   ", 3)

    def test_zero_top_k_rejected(self, tiny_index):
        with pytest.raises(ValueError):
            retrieve(tiny_index, "wave", 0)

    def test_empty_corpus(self):
        index = build_index(Corpus([]))
        assert retrieve(index, "anything", 5) == []

    def test_no_match_returns_empty(self, tiny_index):
        assert retrieve(tiny_index, "zzzzz", 5) == []


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        index = build_index(fixture_corpus())
        index.save(tmp_path / "idx")
        loaded = load_index(tmp_path / "idx")
        assert retrieve(loaded, "alpha beta", 10) == retrieve(index, "alpha beta", 10)

    def test_byte_identical_artifacts(self, tmp_path):
        corpus = fixture_corpus()
        build_index(corpus).save(tmp_path / "one")
        build_index(fixture_corpus()).save(tmp_path / "two")
        for name in ("format-version", "meta.json", "postings.json", "doc-lengths.json", "passages.jsonl"):
            assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()

    def test_format_version_checked(self, tmp_path):
        index = build_index(fixture_corpus())
        index.save(tmp_path / "idx")
        (tmp_path / "idx" / "format-version").write_text("99\n", encoding="utf-8")
        with pytest.raises(ValueError, match="format version"):
            load_index(tmp_path / "idx")

    def test_not_an_index_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_index(tmp_path / "nope")

    def test_reindex_after_adding_passage(self, tmp_path):
        passages = [Passage(id=pid, title="", text=text) for pid, text in FIXTURE]
        index = build_index(Corpus(passages))
        assert retrieve(index, "upsilon", 5) == []
        passages.append(Passage(id="p11", title="", text="upsilon only here"))
        rebuilt = build_index(Corpus(passages))
        hits = retrieve(rebuilt, "upsilon", 5)
        assert [h.passage_id for h in hits] == ["p11"]

    def test_custom_params_persisted(self, tmp_path):
        index = build_index(fixture_corpus(), IndexParams(k1=0.9, b=0.4))
        index.save(tmp_path / "idx")
        loaded = load_index(tmp_path / "idx")
        assert loaded.params == IndexParams(k1=0.9, b=0.4)
        assert retrieve(loaded, "alpha beta", 10) == retrieve(index, "alpha beta", 10)
