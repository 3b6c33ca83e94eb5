"""groundcite: retrieval-grounded answer generation with inline citations.

The package covers the full lifecycle: building a lexical passage
index, constructing citation-annotated training data from unlabeled
queries, budget-bounded iterative inference that retrieves more
evidence for self-reported unsupported statements, and evaluation of
citation recall/precision and answer correctness. Generator and
NLI-scorer backends are pluggable, with HTTP clients and deterministic
test doubles.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .backends import (
    GenerationRequest,
    GenerationResult,
    HttpGenerator,
    HttpScorer,
    MockGenerator,
    OracleScorer,
    TokenUsage,
    UsageMeter,
    nli_score,
    nli_score_batch,
)
from .corpus import Corpus, Passage, load_corpus
from .datagen import (
    DatasetMixSpec,
    TrainingExample,
    UnlabeledQuery,
    emit_training_example,
    generate_candidates,
    ground_candidates,
    run_pipeline,
    select_best,
)
from .evaluation import (
    MetricsReport,
    citation_precision,
    citation_recall,
    em_recall,
    evaluate,
    posthoc_cite,
    recall_5,
    strategyqa_accuracy,
    token_cost,
)
from .grounding import (
    GroundedResponse,
    GroundingReport,
    attach_citations,
    concat_evidence,
    grounding_score,
)
from .markup import (
    MarkedResponse,
    MarkedSentence,
    RenderedPrompt,
    parse_marked_response,
    render_grounded_prompt,
    render_marked_response,
    render_training_output,
    render_zero_shot_prompt,
    segment,
)
from .retrieval import Index, IndexParams, RetrievalHit, build_index, load_index, retrieve
from .tta import TtaResult, TtaTrace, dedup, run_tta, set_diff

__all__ = [
    "Corpus",
    "Passage",
    "load_corpus",
    "Index",
    "IndexParams",
    "RetrievalHit",
    "build_index",
    "load_index",
    "retrieve",
    "segment",
    "parse_marked_response",
    "render_marked_response",
    "render_zero_shot_prompt",
    "render_grounded_prompt",
    "render_training_output",
    "MarkedResponse",
    "MarkedSentence",
    "RenderedPrompt",
    "GenerationRequest",
    "GenerationResult",
    "TokenUsage",
    "UsageMeter",
    "HttpGenerator",
    "HttpScorer",
    "MockGenerator",
    "OracleScorer",
    "nli_score",
    "nli_score_batch",
    "GroundedResponse",
    "GroundingReport",
    "attach_citations",
    "grounding_score",
    "concat_evidence",
    "UnlabeledQuery",
    "DatasetMixSpec",
    "TrainingExample",
    "generate_candidates",
    "ground_candidates",
    "select_best",
    "emit_training_example",
    "run_pipeline",
    "TtaResult",
    "TtaTrace",
    "run_tta",
    "dedup",
    "set_diff",
    "MetricsReport",
    "citation_recall",
    "citation_precision",
    "em_recall",
    "strategyqa_accuracy",
    "recall_5",
    "token_cost",
    "posthoc_cite",
    "evaluate",
]
