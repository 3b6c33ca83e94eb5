"""Scoring prediction files: citation quality, answer correctness, cost.

Citation recall is the fraction of answer sentences whose citation set
jointly entails them (scorer value >= tau_entail, default 0.5); a
sentence with no citations is never recalled. Citation precision judges
each individual citation: a citation on an unrecalled sentence is
imprecise; otherwise it is precise iff it entails the sentence alone or
removing it breaks the joint entailment. Both are micro-averaged over
sentences/citations, with per-query (macro) values reported alongside.

Correctness metrics are dataset-specific: exact-match recall of short
answers, first-standalone-yes/no accuracy, and recall-5 for
multi-answer questions. A post-hoc citing mode attaches citations to
citation-free answers by per-sentence retrieval plus NLI linking.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import markup
from .backends import Scorer, nli_score
from .corpus import Corpus
from .grounding import attach_citations, concat_evidence, passage_premise
from .retrieval import Index, retrieve
from .textutil import normalize, strip_citation_markers

DEFAULT_TAU_ENTAIL = 0.5

DATASET_STYLES = ("nq", "strategyqa", "asqa", "qampari", "citations-only")

_YESNO_TOKEN_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")


class EvaluationError(ValueError):
    """Raised for malformed prediction or gold files."""


@dataclass
class PredictionRecord:
    """One prediction, normalized to sentences with resolved citations."""

    query_id: str
    answer_text: str
    statements: list[str]
    citations: list[list[str]]


@dataclass(frozen=True)
class GoldRecord:
    query_id: str
    short_answers: tuple[str, ...] | None = None
    label: str | None = None
    answer_list: tuple[str, ...] | None = None


def _prediction_from_dict(record: dict, where: str) -> PredictionRecord:
    try:
        query_id = record["query_id"]
        answer = record["answer"]
    except KeyError as exc:
        raise EvaluationError(f"{where}: missing field {exc}") from exc
    if "statements" in record and "citations" in record:
        statements = list(record["statements"])
        citations = [list(c) for c in record["citations"]]
        if len(statements) != len(citations):
            raise EvaluationError(f"{where}: statements and citations differ in length")
        return PredictionRecord(query_id=query_id, answer_text=answer, statements=statements, citations=citations)
    if "working_set" in record:
        working = list(record["working_set"])
        marked, _ = markup.parse_marked_response(answer, len(working))
        statements = [s.text for s in marked.sentences]
        citations = [[working[i - 1] for i in s.citations] for s in marked.sentences]
        return PredictionRecord(query_id=query_id, answer_text=answer, statements=statements, citations=citations)
    statements = [span.text for span in markup.segment(answer)]
    return PredictionRecord(
        query_id=query_id, answer_text=answer, statements=statements, citations=[[] for _ in statements]
    )


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    """Load a JSONL prediction file.

    Records either carry resolved citations ("statements" +
    "citations"), or [n]-markup in "answer" plus a "working_set"
    manifest of passage ids, or a bare "answer" (no citations).
    """
    records: list[PredictionRecord] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except ValueError as exc:
                raise EvaluationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            records.append(_prediction_from_dict(record, f"{path}:{lineno}"))
    return records


def load_gold(path: str | Path) -> dict[str, GoldRecord]:
    gold: dict[str, GoldRecord] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                qid = record["query_id"]
            except (ValueError, KeyError) as exc:
                raise EvaluationError(f"{path}:{lineno}: bad gold record: {exc}") from exc
            shapes = [k for k in ("short_answers", "label", "answer_list") if record.get(k) is not None]
            if len(shapes) != 1:
                raise EvaluationError(
                    f"{path}:{lineno}: exactly one of short_answers/label/answer_list must be set"
                )
            gold[qid] = GoldRecord(
                query_id=qid,
                short_answers=tuple(record["short_answers"]) if record.get("short_answers") is not None else None,
                label=record.get("label"),
                answer_list=tuple(record["answer_list"]) if record.get("answer_list") is not None else None,
            )
    return gold


@dataclass
class PerQueryDetail:
    query_id: str
    value: float
    numerator: int = 0
    denominator: int = 0
    error: str | None = None


@dataclass
class MetricResult:
    value: float          # micro-average
    macro: float          # mean of per-query values over scored queries
    details: list[PerQueryDetail]

    @property
    def scored_queries(self) -> int:
        return sum(1 for d in self.details if d.error is None)


def _finish(details: list[PerQueryDetail]) -> MetricResult:
    scored = [d for d in details if d.error is None]
    num = sum(d.numerator for d in scored)
    den = sum(d.denominator for d in scored)
    micro = num / den if den else 0.0
    macro = sum(d.value for d in scored) / len(scored) if scored else 0.0
    return MetricResult(value=micro, macro=macro, details=details)


def citation_recall(
    predictions: list[PredictionRecord],
    corpus: Corpus,
    scorer: Scorer,
    tau_entail: float = DEFAULT_TAU_ENTAIL,
) -> MetricResult:
    """Fraction of sentences entailed by their own citation set."""
    details: list[PerQueryDetail] = []
    for pred in predictions:
        try:
            recalled = 0
            for sentence, cited in zip(pred.statements, pred.citations):
                if cited and nli_score(scorer, concat_evidence(cited, corpus), sentence) >= tau_entail:
                    recalled += 1
            n = len(pred.statements)
            details.append(
                PerQueryDetail(
                    query_id=pred.query_id,
                    value=recalled / n if n else 0.0,
                    numerator=recalled,
                    denominator=n,
                )
            )
        except KeyError as exc:
            details.append(PerQueryDetail(query_id=pred.query_id, value=0.0, error=str(exc)))
    return _finish(details)


def citation_precision(
    predictions: list[PredictionRecord],
    corpus: Corpus,
    scorer: Scorer,
    tau_entail: float = DEFAULT_TAU_ENTAIL,
) -> MetricResult:
    """Fraction of individual citations that contribute to entailment.

    A citation on an unrecalled sentence is imprecise. On a recalled
    sentence, citation c is precise iff it entails the sentence alone,
    or the remaining citations without c do not.
    """
    details: list[PerQueryDetail] = []
    for pred in predictions:
        try:
            precise = 0
            total = 0
            for sentence, cited in zip(pred.statements, pred.citations):
                if not cited:
                    continue
                total += len(cited)
                joint_ok = nli_score(scorer, concat_evidence(cited, corpus), sentence) >= tau_entail
                if not joint_ok:
                    continue
                for c in cited:
                    alone_ok = nli_score(scorer, concat_evidence([c], corpus), sentence) >= tau_entail
                    if alone_ok:
                        precise += 1
                        continue
                    rest = [x for x in cited if x != c]
                    # Recalled singleton implies alone_ok, so rest is never empty here.
                    if nli_score(scorer, concat_evidence(rest, corpus), sentence) < tau_entail:
                        precise += 1
            details.append(
                PerQueryDetail(
                    query_id=pred.query_id,
                    value=precise / total if total else 0.0,
                    numerator=precise,
                    denominator=total,
                )
            )
        except KeyError as exc:
            details.append(PerQueryDetail(query_id=pred.query_id, value=0.0, error=str(exc)))
    return _finish(details)


def _normalized_answer_body(pred: PredictionRecord) -> str:
    return normalize(strip_citation_markers(pred.answer_text))


def em_recall(predictions: list[PredictionRecord], gold: dict[str, GoldRecord]) -> MetricResult:
    """Per query, the fraction of gold short answers found as substrings."""
    details: list[PerQueryDetail] = []
    for pred in predictions:
        record = gold.get(pred.query_id)
        if record is None or record.short_answers is None:
            details.append(
                PerQueryDetail(query_id=pred.query_id, value=0.0, error="missing gold short_answers")
            )
            continue
        body = _normalized_answer_body(pred)
        hits = sum(1 for ans in record.short_answers if normalize(ans) and normalize(ans) in body)
        n = len(record.short_answers)
        details.append(
            PerQueryDetail(query_id=pred.query_id, value=hits / n if n else 0.0, numerator=hits, denominator=n)
        )
    return _finish(details)


def _first_yesno_token(text: str) -> str | None:
    for token in _YESNO_TOKEN_RE.findall(text.lower()):
        if token in ("yes", "no"):
            return token
    return None


def strategyqa_accuracy(predictions: list[PredictionRecord], gold: dict[str, GoldRecord]) -> MetricResult:
    """Accuracy of the first standalone yes/no token against the gold label.

    Hyphenated compounds ("no-brainer") are single tokens, not a
    standalone yes/no. An answer with neither token counts incorrect.
    """
    details: list[PerQueryDetail] = []
    for pred in predictions:
        record = gold.get(pred.query_id)
        if record is None or record.label is None:
            details.append(PerQueryDetail(query_id=pred.query_id, value=0.0, error="missing gold label"))
            continue
        predicted = _first_yesno_token(strip_citation_markers(pred.answer_text))
        correct = int(predicted == record.label.lower())
        details.append(
            PerQueryDetail(query_id=pred.query_id, value=float(correct), numerator=correct, denominator=1)
        )
    return _finish(details)


def recall_5(predictions: list[PredictionRecord], gold: dict[str, GoldRecord]) -> MetricResult:
    """min(hits, 5) / 5 where hits counts gold answers present in the response."""
    details: list[PerQueryDetail] = []
    for pred in predictions:
        record = gold.get(pred.query_id)
        if record is None or record.answer_list is None:
            details.append(PerQueryDetail(query_id=pred.query_id, value=0.0, error="missing gold answer_list"))
            continue
        body = _normalized_answer_body(pred)
        hits = sum(1 for ans in record.answer_list if normalize(ans) and normalize(ans) in body)
        capped = min(hits, 5)
        details.append(
            PerQueryDetail(query_id=pred.query_id, value=capped / 5.0, numerator=capped, denominator=5)
        )
    return _finish(details)


@dataclass
class CostReport:
    llm_tokens: float
    nli_tokens: float
    any_estimated: bool
    n_queries: int

    def to_dict(self) -> dict:
        return {
            "llm_tokens": self.llm_tokens,
            "nli_tokens": self.nli_tokens,
            "any_estimated": self.any_estimated,
            "n_queries": self.n_queries,
        }


def token_cost(traces: list) -> CostReport:
    """Average per-query token cost from run traces.

    Accepts TtaTrace objects or trace dicts carrying "usage_events"
    records of {kind, tokens, estimated}. Backend-reported counts are
    authoritative; estimated entries are flagged.
    """
    llm_total = 0
    nli_total = 0
    any_estimated = False
    n = 0
    for trace in traces:
        events = trace.usage_events() if hasattr(trace, "usage_events") else trace.get("usage_events", [])
        n += 1
        for event in events:
            record = event.to_dict() if hasattr(event, "to_dict") else event
            if record["kind"] == "llm":
                llm_total += record["tokens"]
            elif record["kind"] == "nli":
                nli_total += record["tokens"]
            any_estimated = any_estimated or bool(record.get("estimated"))
    return CostReport(
        llm_tokens=llm_total / n if n else 0.0,
        nli_tokens=nli_total / n if n else 0.0,
        any_estimated=any_estimated,
        n_queries=n,
    )


def posthoc_cite(
    answers: list[dict],
    index: Index,
    scorer: Scorer,
    k: int = 5,
    tau_link: float = 0.7,
    tau_support: float = 0.5,
) -> list[dict]:
    """Attach citations to citation-free answers, sentence by sentence.

    Each sentence retrieves its own top-k candidates and is linked to
    the argmax-scoring one iff the score clears tau_link. Returns
    prediction records with resolved citations.
    """
    results: list[dict] = []
    for record in answers:
        query_id = record["query_id"]
        answer = record["answer"]
        statements: list[str] = []
        citations: list[list[str]] = []
        unsupported: list[str] = []
        for span in markup.segment(answer):
            hits = retrieve(index, span.text, k)
            if hits:
                candidates = [index.corpus.lookup(h.passage_id) for h in hits]
                grounded = attach_citations(
                    [span.text], candidates, scorer, tau_link=tau_link, tau_support=tau_support
                )
                cited = grounded.citations[0]
                if 0 in grounded.unsupported:
                    unsupported.append(span.text)
            else:
                cited = []
                unsupported.append(span.text)
            statements.append(span.text)
            citations.append(cited)
        results.append(
            {
                "query_id": query_id,
                "answer": answer,
                "statements": statements,
                "citations": citations,
                "unsupported": unsupported,
            }
        )
    return results


@dataclass
class MetricsReport:
    dataset_style: str
    citation_recall: float
    citation_precision: float
    citation_recall_macro: float
    citation_precision_macro: float
    correctness_name: str | None
    correctness: float | None
    n_queries: int
    excluded: list[dict] = field(default_factory=list)
    per_query: list[dict] = field(default_factory=list)
    cost: CostReport | None = None

    def to_dict(self) -> dict:
        report = {
            "dataset_style": self.dataset_style,
            "citation_recall": self.citation_recall,
            "citation_precision": self.citation_precision,
            "citation_recall_macro": self.citation_recall_macro,
            "citation_precision_macro": self.citation_precision_macro,
            "n_queries": self.n_queries,
            "excluded": self.excluded,
            "per_query": self.per_query,
        }
        if self.correctness_name is not None:
            report["correctness_metric"] = self.correctness_name
            report["correctness"] = self.correctness
        if self.cost is not None:
            report["cost"] = self.cost.to_dict()
        return report

    def format_table(self) -> str:
        lines = [f"dataset style: {self.dataset_style}  (queries scored: {self.n_queries})"]
        if self.correctness_name is not None:
            lines.append(f"  {self.correctness_name:<18} {self.correctness:.4f}")
        lines.append(f"  {'citation recall':<18} {self.citation_recall:.4f}  (macro {self.citation_recall_macro:.4f})")
        lines.append(
            f"  {'citation precision':<18} {self.citation_precision:.4f}  (macro {self.citation_precision_macro:.4f})"
        )
        if self.cost is not None:
            lines.append(
                f"  {'avg tokens/query':<18} llm {self.cost.llm_tokens:.1f}  nli {self.cost.nli_tokens:.1f}"
            )
        if self.excluded:
            lines.append(f"  excluded queries: {len(self.excluded)}")
        return "\n".join(lines)


_CORRECTNESS = {
    "nq": ("em-rec", em_recall),
    "asqa": ("em-rec", em_recall),
    "strategyqa": ("acc", strategyqa_accuracy),
    "qampari": ("rec-5", recall_5),
}


def evaluate(
    predictions: list[PredictionRecord],
    gold: dict[str, GoldRecord] | None,
    corpus: Corpus,
    scorer: Scorer,
    dataset_style: str,
    tau_entail: float = DEFAULT_TAU_ENTAIL,
    traces: list | None = None,
) -> MetricsReport:
    """Score a prediction set: citation metrics plus the style's correctness."""
    if dataset_style not in DATASET_STYLES:
        raise EvaluationError(f"unknown dataset style {dataset_style!r}; expected one of {DATASET_STYLES}")
    recall = citation_recall(predictions, corpus, scorer, tau_entail)
    precision = citation_precision(predictions, corpus, scorer, tau_entail)

    correctness_name: str | None = None
    correctness_value: float | None = None
    correctness_details: dict[str, float] = {}
    excluded: list[dict] = []
    if dataset_style != "citations-only":
        if gold is None:
            raise EvaluationError(f"dataset style {dataset_style!r} requires a gold file")
        correctness_name, metric_fn = _CORRECTNESS[dataset_style]
        result = metric_fn(predictions, gold)
        correctness_value = result.macro  # correctness is per query by definition
        for d in result.details:
            if d.error is not None:
                excluded.append({"query_id": d.query_id, "error": d.error, "metric": correctness_name})
            else:
                correctness_details[d.query_id] = d.value

    per_query: list[dict] = []
    for rec_detail, prec_detail in zip(recall.details, precision.details):
        entry: dict = {"query_id": rec_detail.query_id}
        if rec_detail.error is not None:
            entry["error"] = rec_detail.error
            excluded.append({"query_id": rec_detail.query_id, "error": rec_detail.error, "metric": "citations"})
        else:
            entry["citation_recall"] = rec_detail.value
            entry["citation_precision"] = prec_detail.value
        if rec_detail.query_id in correctness_details:
            entry[correctness_name or "correctness"] = correctness_details[rec_detail.query_id]
        per_query.append(entry)

    return MetricsReport(
        dataset_style=dataset_style,
        citation_recall=recall.value,
        citation_precision=precision.value,
        citation_recall_macro=recall.macro,
        citation_precision_macro=precision.macro,
        correctness_name=correctness_name,
        correctness=correctness_value,
        n_queries=recall.scored_queries,
        excluded=excluded,
        per_query=per_query,
        cost=token_cost(traces) if traces else None,
    )
