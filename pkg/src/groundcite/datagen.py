"""Training-data construction from unlabeled queries.

For each query: retrieve a small working set of passages, sample several
zero-shot answers from the base generator, attach citations and detect
unsupported statements with the NLI scorer, keep the answer with the
highest grounding score, and verbalize it as an input/output training
pair. Queries are drawn from multiple datasets according to a mix spec.

Runs are resumable: a progress journal records completed query ids, and
a rerun skips them and appends only the missing records. With the same
scripted backends the output file is byte-identical across runs.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import markup
from .backends import GenerationRequest, Generator, Scorer
from .grounding import GroundedResponse, attach_citations
from .corpus import Passage
from .retrieval import Index, retrieve

logger = logging.getLogger(__name__)

DEFAULT_MIX = {"nq": 2500, "strategyqa": 1000, "fever": 1000}


class DatagenError(RuntimeError):
    """Raised when one query cannot produce a training example."""


@dataclass(frozen=True)
class UnlabeledQuery:
    id: str
    text: str
    dataset_tag: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError(f"query {self.id!r} has empty text")


@dataclass
class CandidateAnswer:
    raw_text: str
    grounded: GroundedResponse
    g: float


@dataclass(frozen=True)
class TrainingExample:
    input_text: str
    output_text: str
    metadata: dict

    def to_dict(self) -> dict:
        return {"input": self.input_text, "output": self.output_text, "metadata": self.metadata}


@dataclass(frozen=True)
class DatasetMixSpec:
    counts: dict[str, int]

    def __post_init__(self) -> None:
        if not self.counts:
            raise ValueError("mix must name at least one dataset")
        for tag, count in self.counts.items():
            if count <= 0:
                raise ValueError(f"mix count for {tag!r} must be positive, got {count}")


def load_queries(path: str | Path) -> list[UnlabeledQuery]:
    """Read a JSONL query file with fields id, text, dataset_tag."""
    queries: list[UnlabeledQuery] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                queries.append(
                    UnlabeledQuery(
                        id=record["id"], text=record["text"], dataset_tag=record.get("dataset_tag", "")
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise DatagenError(f"{path}:{lineno}: bad query record: {exc}") from exc
    return queries


def select_queries(queries: list[UnlabeledQuery], mix: DatasetMixSpec) -> list[UnlabeledQuery]:
    """Take queries in file order until each dataset's quota is filled."""
    remaining = dict(mix.counts)
    selected: list[UnlabeledQuery] = []
    for query in queries:
        if remaining.get(query.dataset_tag, 0) > 0:
            selected.append(query)
            remaining[query.dataset_tag] -= 1
    return selected


def generate_candidates(
    query: UnlabeledQuery,
    index: Index,
    generator: Generator,
    k: int = 5,
    n_samples: int = 4,
    temperature: float = 0.5,
    top_p: float = 0.95,
    max_tokens: int = 512,
    seed: int | None = None,
) -> tuple[list[Passage], list[str]]:
    """Retrieve the working passages and sample candidate answers."""
    hits = retrieve(index, query.text, k)
    passages = [index.corpus.lookup(h.passage_id) for h in hits]
    if not passages:
        raise DatagenError(f"query {query.id}: no passages retrieved")
    prompt = markup.render_zero_shot_prompt(query.text, passages)
    request = GenerationRequest(
        prompt=prompt.text,
        temperature=temperature,
        top_p=top_p,
        num_samples=n_samples,
        max_tokens=max_tokens,
        seed=seed,
    )
    try:
        result = generator.generate(request)
    except Exception as exc:
        raise DatagenError(f"query {query.id}: generation failed: {exc}") from exc
    return passages, list(result.texts)


def ground_candidates(
    raw_texts: list[str],
    passages: list[Passage],
    scorer: Scorer,
    tau_link: float = 0.7,
    tau_support: float = 0.5,
) -> list[CandidateAnswer]:
    """Segment, cite, and score each sampled answer.

    Candidates that contain no sentences are dropped; it is an error for
    every candidate to be empty.
    """
    candidates: list[CandidateAnswer] = []
    for raw in raw_texts:
        statements = [span.text for span in markup.segment(raw)]
        if not statements:
            logger.debug("dropping empty candidate")
            continue
        grounded = attach_citations(statements, passages, scorer, tau_link=tau_link, tau_support=tau_support)
        scores = grounded.per_statement_score or []
        g = sum(
            scores[i] if grounded.citations[i] else 0.0 for i in range(len(statements))
        ) / len(statements)
        candidates.append(CandidateAnswer(raw_text=raw, grounded=grounded, g=g))
    if not candidates:
        raise DatagenError("all sampled candidates were empty")
    return candidates


def select_best(candidates: list[CandidateAnswer]) -> CandidateAnswer:
    """Pick the best-grounded candidate.

    Ties on g break toward fewer unsupported statements, then fewer
    statements, then the earliest sample.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    best_pos = min(
        range(len(candidates)),
        key=lambda i: (
            -candidates[i].g,
            len(candidates[i].grounded.unsupported),
            len(candidates[i].grounded.statements),
            i,
        ),
    )
    return candidates[best_pos]


def emit_training_example(
    query: UnlabeledQuery, best: CandidateAnswer, passages: list[Passage]
) -> TrainingExample:
    """Verbalize the selected answer as an input/output training pair."""
    working_ids = [p.id for p in passages]
    input_text = markup.render_grounded_prompt(query.text, passages).text
    output_text = markup.render_training_output(best.grounded, working_ids)
    metadata = {
        "query_id": query.id,
        "dataset_tag": query.dataset_tag,
        "g": best.g,
        "n_unsupported": len(best.grounded.unsupported),
        "passage_ids": working_ids,
    }
    return TrainingExample(input_text=input_text, output_text=output_text, metadata=metadata)


@dataclass
class RunSummary:
    selected: int = 0
    skipped_completed: int = 0
    emitted: int = 0
    filtered: int = 0
    failed: int = 0
    per_dataset: dict[str, int] = field(default_factory=dict)
    requested: dict[str, int] = field(default_factory=dict)
    mean_g: float = 0.0
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "selected": self.selected,
            "skipped_completed": self.skipped_completed,
            "emitted": self.emitted,
            "filtered": self.filtered,
            "failed": self.failed,
            "per_dataset": dict(self.per_dataset),
            "requested": dict(self.requested),
            "mean_g": self.mean_g,
            "failures": list(self.failures),
        }


def _read_journal(journal_path: Path) -> list[str]:
    if not journal_path.exists():
        return []
    return [line.strip() for line in journal_path.read_text(encoding="utf-8").splitlines() if line.strip()]


def _reconcile_output(output_path: Path, completed: set[str]) -> None:
    """Drop output records not covered by the journal (crash between
    record write and journal write), keeping first occurrences only."""
    if not output_path.exists():
        return
    kept: list[str] = []
    seen: set[str] = set()
    with output_path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                qid = json.loads(line)["metadata"]["query_id"]
            except (ValueError, KeyError, TypeError):
                continue
            if qid in completed and qid not in seen:
                seen.add(qid)
                kept.append(line if line.endswith("\n") else line + "\n")
    tmp = output_path.with_suffix(output_path.suffix + ".tmp")
    tmp.write_text("".join(kept), encoding="utf-8")
    os.replace(tmp, output_path)


def run_pipeline(
    mix: DatasetMixSpec,
    query_files: list[str | Path],
    index: Index,
    generator: Generator,
    scorer: Scorer,
    output_path: str | Path,
    min_g_filter: float = 0.0,
    k: int = 5,
    n_samples: int = 4,
    temperature: float = 0.5,
    top_p: float = 0.95,
    max_tokens: int = 512,
    tau_link: float = 0.7,
    tau_support: float = 0.5,
    seed: int | None = None,
    jobs: int = 1,
    journal_path: str | Path | None = None,
) -> RunSummary:
    """Run the full data-generation pipeline over a query mix.

    One JSONL record per retained query is appended to ``output_path``;
    completed query ids go to the journal so an interrupted run can be
    resumed without duplicates. Per-query failures are recorded and the
    run continues.
    """
    output_path = Path(output_path)
    journal = Path(journal_path) if journal_path is not None else output_path.with_suffix(
        output_path.suffix + ".journal"
    )

    all_queries: list[UnlabeledQuery] = []
    for qf in query_files:
        all_queries.extend(load_queries(qf))
    selected = select_queries(all_queries, mix)

    completed_ids = _read_journal(journal)
    completed = set(completed_ids)
    if completed:
        _reconcile_output(output_path, completed)
    elif output_path.exists():
        output_path.unlink()  # fresh run; no journal means no resumable state

    summary = RunSummary(
        selected=len(selected),
        requested=dict(mix.counts),
    )
    pending = [q for q in selected if q.id not in completed]
    summary.skipped_completed = len(selected) - len(pending)

    def process(query: UnlabeledQuery) -> tuple[str, TrainingExample | None, str | None]:
        """Returns (query_id, example-or-None-if-filtered, error-or-None)."""
        try:
            passages, texts = generate_candidates(
                query, index, generator,
                k=k, n_samples=n_samples, temperature=temperature,
                top_p=top_p, max_tokens=max_tokens, seed=seed,
            )
            candidates = ground_candidates(texts, passages, scorer, tau_link=tau_link, tau_support=tau_support)
            best = select_best(candidates)
            if best.g < min_g_filter:
                return query.id, None, None
            return query.id, emit_training_example(query, best, passages), None
        except Exception as exc:
            logger.warning("query %s failed: %s", query.id, exc)
            return query.id, None, f"{exc}"

    g_total = 0.0
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with output_path.open("a", encoding="utf-8") as out, journal.open("a", encoding="utf-8") as jrn:

        def write_result(query: UnlabeledQuery, example: TrainingExample | None, error: str | None) -> None:
            nonlocal g_total
            if error is not None:
                summary.failed += 1
                summary.failures.append({"query_id": query.id, "error": error})
                return
            if example is None:
                summary.filtered += 1
            else:
                out.write(json.dumps(example.to_dict(), ensure_ascii=False) + "\n")
                out.flush()
                summary.emitted += 1
                summary.per_dataset[query.dataset_tag] = summary.per_dataset.get(query.dataset_tag, 0) + 1
                g_total += example.metadata["g"]
            jrn.write(query.id + "\n")
            jrn.flush()

        if jobs <= 1:
            for query in pending:
                qid, example, error = process(query)
                write_result(query, example, error)
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = [(query, pool.submit(process, query)) for query in pending]
                for query, future in futures:
                    _, example, error = future.result()
                    write_result(query, example, error)

    summary.mean_g = g_total / summary.emitted if summary.emitted else 0.0
    return summary
