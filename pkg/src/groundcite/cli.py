"""Command-line surface tying the pipeline stages together.

Subcommands: index, gen-data, infer, posthoc-cite, eval, version.
Exit codes: 0 success, 1 partial per-item failures, 2 configuration or
usage error, 3 backend unreachable. Outputs are written atomically
(temp file + rename), except the gen-data record stream, which is
journaled incrementally so interrupted runs can resume.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .backends import ScriptExhaustedError, TransportError, UsageMeter
from .config import ConfigError, RunConfig, build_generator, build_scorer, load_config
from .corpus import CorpusFormatError, load_corpus
from .datagen import DatagenError, DatasetMixSpec, run_pipeline
from .evaluation import (
    EvaluationError,
    load_gold,
    load_predictions,
    evaluate,
    posthoc_cite,
)
from .retrieval import INDEX_FORMAT_VERSION, IndexParams, build_index, load_index
from .tta import TtaError, run_tta

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
EXIT_BACKEND = 3


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _parse_mix(spec: str) -> DatasetMixSpec:
    counts: dict[str, int] = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        tag, _, count = part.partition("=")
        if not count:
            raise ConfigError(f"bad mix entry {part!r}; expected tag=count")
        counts[tag.strip()] = int(count)
    return DatasetMixSpec(counts=counts)


def _load_query_records(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                record["id"], record["text"]
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad query record: {exc}") from exc
            records.append(record)
    return records


def cmd_index(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: index directory {out} exists; use --force to overwrite", file=sys.stderr)
        return EXIT_USAGE
    corpus = load_corpus(args.corpus)
    index = build_index(corpus, IndexParams(k1=args.k1, b=args.b))
    index.save(out)
    print(f"indexed {len(corpus)} passages into {out} (format version {INDEX_FORMAT_VERSION})")
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace, config: RunConfig) -> int:
    meter = UsageMeter()
    generator = build_generator(config, meter)
    scorer = build_scorer(config, meter)
    index = load_index(config.paths.index or args.index)
    mix = _parse_mix(args.mix)
    summary = run_pipeline(
        mix=mix,
        query_files=args.queries,
        index=index,
        generator=generator,
        scorer=scorer,
        output_path=args.out,
        min_g_filter=args.min_g,
        k=config.tta.k,
        n_samples=config.sampling.n_samples,
        temperature=config.sampling.datagen_temperature,
        top_p=config.sampling.top_p,
        max_tokens=config.sampling.max_tokens,
        tau_link=config.thresholds.tau_link,
        tau_support=config.thresholds.tau_support,
        seed=config.seed,
        jobs=args.jobs if args.jobs is not None else config.jobs,
    )
    report = {
        "summary": summary.to_dict(),
        "usage": {"llm_tokens": meter.total("llm"), "nli_tokens": meter.total("nli")},
        "effective_config": config.to_dict(),
    }
    print(json.dumps(report, indent=2, ensure_ascii=False))
    if args.summary_out:
        write_atomic(args.summary_out, json.dumps(report, indent=2, ensure_ascii=False) + "\n")
    return EXIT_PARTIAL if summary.failed else EXIT_OK


def cmd_infer(args: argparse.Namespace, config: RunConfig) -> int:
    meter = UsageMeter()
    generator = build_generator(config, meter)
    index = load_index(config.paths.index or args.index)
    budget = args.budget if args.budget is not None else config.tta.budget
    if not args.tta:
        budget = 1
    trace_dir = Path(args.trace_dir) if args.trace_dir else None
    if trace_dir:
        trace_dir.mkdir(parents=True, exist_ok=True)

    lines: list[str] = []
    failures = 0
    for record in _load_query_records(args.queries):
        qid = record["id"]
        try:
            result = run_tta(
                query=record["text"],
                index=index,
                generator=generator,
                k=config.tta.k,
                budget=budget,
                temperature=config.sampling.eval_temperature,
                top_p=config.sampling.top_p,
                max_tokens=config.sampling.max_tokens,
                seed=config.seed,
                supplement=args.tta,
            )
        except TtaError as exc:
            logger.warning("query %s failed: %s", qid, exc)
            failures += 1
            continue
        trace_path = ""
        if trace_dir:
            trace_path = str(trace_dir / f"{qid}.trace.json")
            write_atomic(trace_path, json.dumps(result.trace.to_dict(), indent=2, ensure_ascii=False) + "\n")
        answer = result.answer
        lines.append(
            json.dumps(
                {
                    "query_id": qid,
                    "answer": " ".join(answer.statements),
                    "statements": answer.statements,
                    "citations": [list(c) for c in answer.citations],
                    "unsupported": sorted(answer.unsupported),
                    "cited_passages": result.cited_passages,
                    "trace_path": trace_path,
                    "llm_calls": result.trace.llm_calls,
                    "tokens": sum(rec.usage.total for rec in result.trace.iterations),
                },
                ensure_ascii=False,
            )
        )
    write_atomic(args.out, "".join(line + "\n" for line in lines))
    print(f"wrote {len(lines)} predictions to {args.out} ({failures} failures)")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_posthoc_cite(args: argparse.Namespace, config: RunConfig) -> int:
    meter = UsageMeter()
    scorer = build_scorer(config, meter)
    index = load_index(config.paths.index or args.index)
    answers: list[dict] = []
    failures = 0
    with open(args.answers, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                record["query_id"], record["answer"]
                answers.append(record)
            except (ValueError, KeyError) as exc:
                print(f"error: {args.answers}:{lineno}: {exc}", file=sys.stderr)
                failures += 1
    cited = posthoc_cite(
        answers, index, scorer,
        k=args.k if args.k is not None else config.tta.k,
        tau_link=config.thresholds.tau_link,
        tau_support=config.thresholds.tau_support,
    )
    write_atomic(args.out, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in cited))
    print(f"wrote {len(cited)} cited answers to {args.out} ({failures} malformed lines)")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    scorer = build_scorer(config)
    corpus = load_corpus(config.paths.corpus or args.corpus)
    predictions = load_predictions(args.predictions)
    gold = load_gold(args.gold) if args.gold else None

    traces = None
    if args.trace_dir:
        traces = []
        for trace_file in sorted(Path(args.trace_dir).glob("*.trace.json")):
            traces.append(json.loads(trace_file.read_text(encoding="utf-8")))

    report = evaluate(
        predictions,
        gold,
        corpus,
        scorer,
        dataset_style=args.dataset_style,
        tau_entail=config.thresholds.tau_entail,
        traces=traces,
    )
    print(report.format_table())
    payload = {"report": report.to_dict(), "effective_config": config.to_dict()}
    if args.out:
        write_atomic(args.out, json.dumps(payload, indent=2, ensure_ascii=False) + "\n")
    missing = {p.query_id for p in predictions} - set(gold or {})
    if gold is not None and missing:
        print(f"warning: {len(missing)} predictions had no gold record", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_PARTIAL if report.excluded else EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groundcite",
        description="Grounded answer generation with citations: indexing, data generation, inference, evaluation.",
    )
    parser.add_argument("--config", help="path to an INI config file")
    parser.add_argument("-v", "--verbose", action="store_true", help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="build a retrieval index from a corpus file")
    p_index.add_argument("--corpus", required=True, help="JSONL corpus file")
    p_index.add_argument("--out", required=True, help="index directory to create")
    p_index.add_argument("--force", action="store_true", help="overwrite an existing index")
    p_index.add_argument("--k1", type=float, default=1.2)
    p_index.add_argument("--b", type=float, default=0.75)

    p_gen = sub.add_parser("gen-data", help="construct training data from unlabeled queries")
    p_gen.add_argument("--queries", nargs="+", required=True, help="JSONL query files ({id, text, dataset_tag})")
    p_gen.add_argument("--out", required=True, help="output JSONL of training examples")
    p_gen.add_argument("--mix", required=True, help="per-dataset counts, e.g. nq=2500,strategyqa=1000,fever=1000")
    p_gen.add_argument("--min-g", type=float, default=0.0, help="drop queries whose best candidate scores below this")
    p_gen.add_argument("--index", help="index directory (overrides config paths.index)")
    p_gen.add_argument("--jobs", type=int, help="worker count (default from config; 1 = deterministic)")
    p_gen.add_argument("--summary-out", help="also write the run summary JSON here")

    p_infer = sub.add_parser("infer", help="answer queries with grounded citations")
    p_infer.add_argument("--queries", required=True, help="JSONL query file ({id, text})")
    p_infer.add_argument("--out", required=True, help="output JSONL prediction file")
    p_infer.add_argument("--index", help="index directory (overrides config paths.index)")
    tta_group = p_infer.add_mutually_exclusive_group()
    tta_group.add_argument("--tta", dest="tta", action="store_true", default=True,
                           help="iterative inference (default)")
    tta_group.add_argument("--no-tta", dest="tta", action="store_false",
                           help="single grounded generation per query")
    p_infer.add_argument("--budget", type=int, help="LLM-call budget per query (default from config)")
    p_infer.add_argument("--trace-dir", help="directory for per-query trace JSON files")

    p_post = sub.add_parser("posthoc-cite", help="attach citations to citation-free answers")
    p_post.add_argument("--answers", required=True, help="JSONL of {query_id, answer}")
    p_post.add_argument("--out", required=True, help="output JSONL prediction file")
    p_post.add_argument("--index", help="index directory (overrides config paths.index)")
    p_post.add_argument("--k", type=int, help="passages retrieved per sentence")

    p_eval = sub.add_parser("eval", help="score a prediction file")
    p_eval.add_argument("--predictions", required=True, help="JSONL prediction file")
    p_eval.add_argument("--gold", help="JSONL gold file (omit for citations-only)")
    p_eval.add_argument("--dataset-style", required=True,
                        choices=["nq", "strategyqa", "asqa", "qampari", "citations-only"])
    p_eval.add_argument("--corpus", help="JSONL corpus file (overrides config paths.corpus)")
    p_eval.add_argument("--out", help="write the JSON report here")
    p_eval.add_argument("--trace-dir", help="trace directory for token-cost accounting")

    sub.add_parser("version", help="print artifact and index-format versions")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "version":
        print(f"groundcite {__version__} (index format {INDEX_FORMAT_VERSION})")
        return EXIT_OK

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "index":
            return cmd_index(args)
        if args.command == "gen-data":
            return cmd_gen_data(args, config)
        if args.command == "infer":
            return cmd_infer(args, config)
        if args.command == "posthoc-cite":
            return cmd_posthoc_cite(args, config)
        if args.command == "eval":
            return cmd_eval(args, config)
    except (ConfigError, CorpusFormatError, EvaluationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TransportError as exc:
        print(f"error: backend unreachable: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DatagenError, TtaError, ScriptExhaustedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
