"""Budget-bounded iterative inference with self-guided retrieval.

Each iteration presents the current working passages, generates one
grounded answer, and refreshes the working set: passages the model
cited join the persistent relevant list, and the next working set is
the deduplicated relevant list topped up with freshly retrieved
passages not yet shown. Retrieval is steered by the model's own
unsupported statements when it reports any, and by the original query
otherwise. The loop stops when the generation budget is spent or when
the recomputed working set is identical to the current one (further
iterations would see the same input).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence, TypeVar

from . import markup
from .backends import GenerationRequest, Generator, TokenUsage, UsageEvent
from .grounding import GroundedResponse
from .retrieval import Index, retrieve

logger = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_K = 5
DEFAULT_BUDGET = 4


class TtaError(RuntimeError):
    """Raised when an iterative run cannot proceed (carries partial trace)."""

    def __init__(self, message: str, trace: "TtaTrace | None" = None) -> None:
        super().__init__(message)
        self.trace = trace


def dedup(ids: Sequence[T]) -> list[T]:
    """Drop repeated elements, keeping the first occurrence in order."""
    seen: set[T] = set()
    out: list[T] = []
    for item in ids:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def set_diff(ids: Sequence[T], exclude: Sequence[T]) -> list[T]:
    """Elements of ids not in exclude, order preserved."""
    drop = set(exclude)
    return [item for item in ids if item not in drop]


def _round_robin(lists: list[list[T]]) -> list[T]:
    merged: list[T] = []
    for rank in range(max((len(l) for l in lists), default=0)):
        for l in lists:
            if rank < len(l):
                merged.append(l[rank])
    return merged


@dataclass
class TtaIteration:
    """One generator call and, when it completed an iteration, the state updates."""

    iteration: int
    working: list[str]
    raw_output: str
    parse_warnings: list[str]
    usage: TokenUsage
    parse_failed: bool = False
    retry: bool = False
    statements: list[str] = field(default_factory=list)
    citations: list[list[str]] = field(default_factory=list)
    cited_ids: list[str] = field(default_factory=list)
    unsupported_texts: list[str] = field(default_factory=list)
    relevant_after: list[str] = field(default_factory=list)
    seen_after: list[str] = field(default_factory=list)
    supplement_queries: list[str] = field(default_factory=list)
    supplement_ids: list[str] = field(default_factory=list)
    next_working: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "working": list(self.working),
            "raw_output": self.raw_output,
            "parse_warnings": list(self.parse_warnings),
            "parse_failed": self.parse_failed,
            "retry": self.retry,
            "statements": list(self.statements),
            "citations": [list(c) for c in self.citations],
            "cited_ids": list(self.cited_ids),
            "unsupported_texts": list(self.unsupported_texts),
            "relevant_after": list(self.relevant_after),
            "seen_after": list(self.seen_after),
            "supplement_queries": list(self.supplement_queries),
            "supplement_ids": list(self.supplement_ids),
            "next_working": list(self.next_working),
            "usage": {
                "prompt_tokens": self.usage.prompt_tokens,
                "completion_tokens": self.usage.completion_tokens,
                "estimated": self.usage.estimated,
            },
        }


@dataclass
class TtaTrace:
    query: str
    budget: int
    k: int
    iterations: list[TtaIteration] = field(default_factory=list)
    llm_calls: int = 0
    early_stopped: bool = False

    @property
    def budget_remaining(self) -> int:
        return self.budget - self.llm_calls

    def usage_events(self) -> list[UsageEvent]:
        return [
            UsageEvent(kind="llm", tokens=rec.usage.total, estimated=rec.usage.estimated)
            for rec in self.iterations
        ]

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "budget": self.budget,
            "k": self.k,
            "llm_calls": self.llm_calls,
            "budget_remaining": self.budget_remaining,
            "early_stopped": self.early_stopped,
            "iterations": [rec.to_dict() for rec in self.iterations],
            "usage_events": [e.to_dict() for e in self.usage_events()],
        }


@dataclass
class TtaResult:
    answer: GroundedResponse
    cited_passages: list[str]
    trace: TtaTrace


def _fallback_response(raw: str) -> markup.MarkedResponse:
    # Degenerate output: the whole text becomes one uncited sentence that
    # reports itself as unsupported.
    text = " ".join(raw.split())
    if not text:
        return markup.MarkedResponse(sentences=[], unsupported_texts=[])
    return markup.MarkedResponse(
        sentences=[markup.MarkedSentence(text=text, citations=[])],
        unsupported_texts=[text],
    )


def _parse_or_none(raw: str, working_size: int) -> tuple[markup.MarkedResponse | None, list[str]]:
    marked, warnings = markup.parse_marked_response(raw, working_size)
    if markup.has_structural_warning(warnings) or not marked.sentences:
        return None, warnings
    return marked, warnings


def run_tta(
    query: str,
    index: Index,
    generator: Generator,
    k: int = DEFAULT_K,
    budget: int = DEFAULT_BUDGET,
    temperature: float = 0.25,
    top_p: float = 0.95,
    max_tokens: int = 512,
    seed: int | None = None,
    supplement: bool = True,
    retrieve_depth: int | None = None,
) -> TtaResult:
    """Run the iterative inference loop for one query.

    ``supplement=False`` disables the post-generation retrieval updates
    (single-shot grounded inference; pair with budget=1).
    ``retrieve_depth`` is the number of hits fetched per supplementing
    retrieval before exclusion of already-seen passages; defaults to 2k
    so the working set can refill after exclusions.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    depth = retrieve_depth if retrieve_depth is not None else 2 * k
    corpus = index.corpus
    trace = TtaTrace(query=query, budget=budget, k=k)

    relevant: list[str] = []
    seen: list[str] = []
    working = [hit.passage_id for hit in retrieve(index, query, k)]
    if not working:
        raise TtaError(f"no passages retrieved for query {query!r}", trace)

    answer: GroundedResponse | None = None
    cited_ids: list[str] = []
    iteration = 0
    while trace.llm_calls < budget:
        iteration += 1
        passages = [corpus.lookup(pid) for pid in working]
        prompt = markup.render_grounded_prompt(query, passages)
        request = GenerationRequest(
            prompt=prompt.text,
            temperature=temperature,
            top_p=top_p,
            num_samples=1,
            max_tokens=max_tokens,
            seed=seed,
        )

        try:
            result = generator.generate(request)
        except Exception as exc:
            raise TtaError(f"generator failed at iteration {iteration}: {exc}", trace) from exc
        trace.llm_calls += 1
        raw = result.texts[0]
        marked, warnings = _parse_or_none(raw, len(working))

        if marked is None and trace.llm_calls < budget:
            # One retry of the same call, consuming budget.
            trace.iterations.append(
                TtaIteration(
                    iteration=iteration,
                    working=list(working),
                    raw_output=raw,
                    parse_warnings=warnings,
                    usage=result.usage,
                    parse_failed=True,
                )
            )
            try:
                result = generator.generate(request)
            except Exception as exc:
                raise TtaError(f"generator failed at iteration {iteration} (retry): {exc}", trace) from exc
            trace.llm_calls += 1
            raw = result.texts[0]
            marked, warnings = _parse_or_none(raw, len(working))
            retried = True
        else:
            retried = False

        parse_failed = marked is None
        if marked is None:
            marked = _fallback_response(raw)

        statements = [s.text for s in marked.sentences]
        citations = [[working[idx - 1] for idx in s.citations] for s in marked.sentences]
        cited_ids = dedup([pid for ids in citations for pid in ids])
        # A sentence both cited and self-reported unsupported keeps its
        # citations; its text still steers the supplementing retrieval.
        unsupported_idx = {
            i for i, s in enumerate(marked.sentences) if not s.citations and s.text in marked.unsupported_texts
        }
        if statements:
            answer = GroundedResponse(statements=statements, citations=citations, unsupported=unsupported_idx)
        else:
            answer = GroundedResponse(statements=[raw], citations=[[]], unsupported=set())

        relevant = dedup(relevant + cited_ids)
        seen = seen + working

        supplement_queries: list[str] = []
        supplement_ids: list[str] = []
        if supplement:
            supplement_queries = [u for u in marked.unsupported_texts if u.strip()]
            if supplement_queries:
                per_query_hits = [
                    [hit.passage_id for hit in retrieve(index, q, depth)] for q in supplement_queries
                ]
                supplement_ids = dedup(_round_robin(per_query_hits))
            else:
                supplement_ids = [hit.passage_id for hit in retrieve(index, query, depth)]
            next_working = dedup(relevant + set_diff(supplement_ids, seen))[:k]
            if not next_working:
                next_working = list(working)
        else:
            next_working = list(working)

        trace.iterations.append(
            TtaIteration(
                iteration=iteration,
                working=list(working),
                raw_output=raw,
                parse_warnings=warnings,
                usage=result.usage,
                parse_failed=parse_failed,
                retry=retried,
                statements=statements,
                citations=citations,
                cited_ids=list(cited_ids),
                unsupported_texts=list(marked.unsupported_texts),
                relevant_after=list(relevant),
                seen_after=list(seen),
                supplement_queries=supplement_queries,
                supplement_ids=supplement_ids,
                next_working=list(next_working),
            )
        )

        if next_working == working:
            trace.early_stopped = trace.llm_calls < budget
            if trace.early_stopped:
                logger.debug(
                    "early stop for %r: working set stable after %d calls (budget %d)",
                    query, trace.llm_calls, budget,
                )
            break
        working = next_working

    assert answer is not None  # budget >= 1 guarantees at least one call
    return TtaResult(answer=answer, cited_passages=cited_ids, trace=trace)
