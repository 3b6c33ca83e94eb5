"""Citation attachment, unsupported-statement detection, and the grounding score.

A response is grounded sentence by sentence: each statement is linked to
the candidate passage that maximally supports it according to an NLI
scorer, provided the score clears the link threshold (default 0.7). A
statement whose best score does not exceed the support threshold
(default 0.5) is recorded as unsupported. Scores in between leave the
statement uncited but not unsupported.

The grounding score of a response is the mean, over statements, of the
scorer value of each statement against the concatenation of its cited
passages; statements with no citations contribute 0 without invoking
the scorer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .backends import Scorer, nli_score
from .corpus import Corpus, Passage

DEFAULT_TAU_LINK = 0.7
DEFAULT_TAU_SUPPORT = 0.5


def passage_premise(passage: Passage) -> str:
    """The premise string presented to the NLI scorer for one passage."""
    return f"{passage.title}\n{passage.text}"


@dataclass
class GroundedResponse:
    """Statements with per-statement citation sets and unsupported indices.

    ``citations[i]`` lists the passage ids cited by ``statements[i]``
    (at most one when produced by attach_citations; parsed model output
    may carry several). ``unsupported`` holds 0-based statement indices;
    an unsupported statement always has an empty citation set.
    ``per_statement_score`` records the best candidate score seen at
    attachment time, when known.
    """

    statements: list[str]
    citations: list[list[str]]
    unsupported: set[int] = field(default_factory=set)
    per_statement_score: list[float] | None = None

    def __post_init__(self) -> None:
        if len(self.citations) != len(self.statements):
            raise ValueError(
                f"citations ({len(self.citations)}) and statements ({len(self.statements)}) differ in length"
            )
        for idx in self.unsupported:
            if not 0 <= idx < len(self.statements):
                raise ValueError(f"unsupported index {idx} out of range")
            if self.citations[idx]:
                raise ValueError(f"unsupported statement {idx} has citations {self.citations[idx]}")
        if self.per_statement_score is not None and len(self.per_statement_score) != len(self.statements):
            raise ValueError("per_statement_score length must match statements")

    def to_dict(self) -> dict:
        record = {
            "statements": list(self.statements),
            "citations": [list(c) for c in self.citations],
            "unsupported": sorted(self.unsupported),
        }
        if self.per_statement_score is not None:
            record["per_statement_score"] = list(self.per_statement_score)
        return record


@dataclass(frozen=True)
class StatementGrounding:
    index: int
    score: float
    cited: tuple[str, ...]


@dataclass(frozen=True)
class GroundingReport:
    g: float
    per_statement: tuple[StatementGrounding, ...]


def attach_citations(
    statements: list[str],
    candidates: list[Passage],
    scorer: Scorer,
    tau_link: float = DEFAULT_TAU_LINK,
    tau_support: float = DEFAULT_TAU_SUPPORT,
) -> GroundedResponse:
    """Link each statement to its maximally supporting candidate passage.

    The best candidate e for statement s is cited iff score(e, s) >
    tau_link; s is unsupported iff no candidate scores above
    tau_support. Argmax ties break toward the earlier candidate.
    """
    if not statements:
        raise ValueError("statements must be non-empty")
    if not candidates:
        raise ValueError("candidates must be non-empty")
    if not 0.0 <= tau_support <= tau_link <= 1.0:
        raise ValueError(f"thresholds must satisfy 0 <= tau_support <= tau_link <= 1, got {tau_support}, {tau_link}")
    premises = [passage_premise(c) for c in candidates]
    citations: list[list[str]] = []
    unsupported: set[int] = set()
    best_scores: list[float] = []
    for i, statement in enumerate(statements):
        best_idx = 0
        best = nli_score(scorer, premises[0], statement)
        for j in range(1, len(candidates)):
            score = nli_score(scorer, premises[j], statement)
            if score > best:
                best, best_idx = score, j
        best_scores.append(best)
        citations.append([candidates[best_idx].id] if best > tau_link else [])
        if best <= tau_support:
            unsupported.add(i)
    return GroundedResponse(
        statements=list(statements),
        citations=citations,
        unsupported=unsupported,
        per_statement_score=best_scores,
    )


def concat_evidence(passage_ids: list[str], corpus: Corpus) -> str:
    """Concatenate cited passages into one premise, in citation order."""
    if not passage_ids:
        raise ValueError("passage_ids must be non-empty")
    return "\n\n".join(passage_premise(corpus.lookup(pid)) for pid in passage_ids)


def grounding_score(response: GroundedResponse, corpus: Corpus, scorer: Scorer) -> GroundingReport:
    """Mean per-statement support of a response by its own citations."""
    if not response.statements:
        raise ValueError("response has no statements")
    per_statement: list[StatementGrounding] = []
    total = 0.0
    for i, statement in enumerate(response.statements):
        cited = response.citations[i]
        if cited:
            score = nli_score(scorer, concat_evidence(cited, corpus), statement)
        else:
            score = 0.0
        total += score
        per_statement.append(StatementGrounding(index=i, score=score, cited=tuple(cited)))
    return GroundingReport(g=total / len(response.statements), per_statement=tuple(per_statement))
