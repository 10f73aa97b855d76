"""Command-line entry point.

Exit codes: 0 success, 1 bad input (validation, parse, usage), 2 backend
failure (unavailable after retries or protocol violation). Logs go to stderr;
command output goes to stdout or the requested file.
"""

import argparse
import json
import logging
import sys
from typing import Any, Sequence

from toolde import __version__
from toolde.canonicalize import audit_completeness, canonicalize, coverage_matrix, write_canonical_corpus
from toolde.config import ToolkitConfig, load_config, make_backend
from toolde.corpus import (
    ExpandedDocument,
    FieldSelection,
    RankedRun,
    RawToolDocument,
    load_any_corpus,
    load_corpus,
    load_expanded_corpus,
    load_qrels,
    load_queries,
    load_run,
    render_document_text,
    write_expanded_corpus,
    write_run,
)
from toolde.errors import BackendUnavailable, ParseError, ProtocolError, ValidationError
from toolde.evaluation import ablate, evaluate, sample_similarity_pairs, similarity_analysis
from toolde.pipeline import TOKENIZERS, PipelineConfig, run_pipeline, token_stats
from toolde.rerank import RerankRequest, rerank
from toolde.retrieval import (
    SparseIndexParams,
    build_dense_index,
    build_sparse_index,
    index_kind,
    load_dense_index,
    load_sparse_index,
    save_dense_index,
    save_sparse_index,
    search_dense,
    search_sparse,
)
from toolde.train_data import build_embed_train, build_rerank_train, export_train

logger = logging.getLogger("toolde")


class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors, so they exit 1 (help still exits 0)."""

    def error(self, message: str) -> "Any":
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ── small helpers ──


def _dump_json(payload: dict[str, Any]) -> str:
    return json.dumps(payload, ensure_ascii=False, indent=2)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        print(text)
    else:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text)
            if not text.endswith("\n"):
                handle.write("\n")
        logger.info("wrote %s", out)


def _selection(spec: str | None) -> FieldSelection | None:
    return None if spec is None else FieldSelection.parse(spec)


def _load_config(args: argparse.Namespace) -> ToolkitConfig:
    return load_config(getattr(args, "config", None))


def _require_seed(args: argparse.Namespace, config: ToolkitConfig) -> int:
    seed = args.seed if args.seed is not None else config.seed
    if seed is None:
        raise ValidationError(
            "this command is randomized: pass --seed or set seed in the config file"
        )
    return int(seed)


def _doc_map(docs: Sequence[Any]) -> dict[str, Any]:
    return {doc.id: doc for doc in docs}


def _render_pairs(
    docs: "Sequence[RawToolDocument | ExpandedDocument]", selection: FieldSelection | None
) -> list[tuple[str, str]]:
    return [(doc.id, render_document_text(doc, selection)) for doc in docs]


# ── commands ──


def _cmd_canonicalize(args: argparse.Namespace) -> None:
    docs = [canonicalize(doc) for doc in load_corpus(args.corpus)]
    write_canonical_corpus(docs, args.out)
    logger.info("canonicalized %d documents into %s", len(docs), args.out)


def _cmd_coverage(args: argparse.Namespace) -> None:
    report = coverage_matrix([canonicalize(doc) for doc in load_corpus(args.corpus)])
    if args.csv:
        _emit(report.to_csv(), args.csv)
    if args.json or not args.csv:
        _emit(_dump_json(report.to_json_dict()), args.json)


def _cmd_audit(args: argparse.Namespace) -> None:
    config = _load_config(args)
    seed = _require_seed(args, config)
    docs = load_any_corpus(args.corpus)
    report = audit_completeness(
        docs,
        make_backend(config, "judge"),
        per_domain_sample=args.sample,
        seed=seed,
        selection=_selection(args.fields),
        max_tokens=args.max_tokens,
    )
    _emit(_dump_json(report.to_json_dict()), args.out)


def _cmd_expand(args: argparse.Namespace) -> None:
    config = _load_config(args)
    seed = _require_seed(args, config)
    corpus = load_corpus(args.corpus)
    pipeline_config = PipelineConfig(
        expander=make_backend(config, "expander"),
        judge=make_backend(config, "judge"),
        refiner=make_backend(config, "refiner"),
        max_tokens=args.max_tokens if args.max_tokens is not None else config.max_tokens,
        review_sample_size=(
            args.review_sample_size
            if args.review_sample_size is not None
            else config.review_sample_size
        ),
        seed=seed,
        strict=not args.lenient,
    )
    jobs = args.jobs if args.jobs is not None else config.jobs
    documents, report, batch = run_pipeline(
        corpus, pipeline_config, checkpoint_path=args.checkpoint, jobs=jobs
    )
    write_expanded_corpus(documents, args.out)
    logger.info("expanded %d/%d documents into %s", len(documents), len(corpus), args.out)
    if args.report:
        _emit(_dump_json(report.to_json_dict()), args.report)
    if args.review_batch:
        _emit(_dump_json(batch.to_json_dict()), args.review_batch)


def _cmd_stats(args: argparse.Namespace) -> None:
    docs = load_expanded_corpus(args.corpus)
    stats = token_stats(docs, tokenizer=args.tokenizer, selection=_selection(args.fields))
    _emit(_dump_json(stats.to_json_dict()), args.out)


def _cmd_index(args: argparse.Namespace) -> None:
    docs = load_any_corpus(args.corpus)
    pairs = _render_pairs(docs, _selection(args.fields))
    if args.mode == "sparse":
        config = _load_config(args)
        k1 = args.k1 if args.k1 is not None else config.k1
        b = args.b if args.b is not None else config.b
        index = build_sparse_index(pairs, SparseIndexParams(k1=k1, b=b))
        save_sparse_index(index, args.out)
    else:
        config = _load_config(args)
        backend = make_backend(config, "embed")
        index = build_dense_index(pairs, backend, batch_size=args.batch_size)
        save_dense_index(index, args.out)
    logger.info("built %s index over %d documents at %s", args.mode, len(pairs), args.out)


def _cmd_search(args: argparse.Namespace) -> None:
    queries = load_queries(args.queries)
    kind = index_kind(args.index)
    rankings: dict[str, list[tuple[str, float]]] = {}
    if kind == "sparse":
        index = load_sparse_index(args.index)
        mode = args.instruction_mode or "query_only"
        for query in queries:
            rankings[query.qid] = search_sparse(index, query, args.k, instruction_mode=mode)
    else:
        config = _load_config(args)
        backend = make_backend(config, "embed")
        index = load_dense_index(args.index)
        mode = args.instruction_mode or "concat"
        for query in queries:
            rankings[query.qid] = search_dense(index, query, backend, args.k, instruction_mode=mode)
    run = RankedRun(tag=args.tag, rankings=rankings)
    write_run(run, args.out)
    logger.info("searched %d queries (%s index) into %s", len(queries), kind, args.out)


def _cmd_rerank(args: argparse.Namespace) -> None:
    config = _load_config(args)
    backend = make_backend(config, "rerank")
    first_stage = load_run(args.run)
    queries = {query.qid: query for query in load_queries(args.queries)}
    corpus = _doc_map(load_any_corpus(args.corpus))
    pool_size = args.pool if args.pool is not None else config.pool_size
    missing = [qid for qid in first_stage.rankings if qid not in queries]
    if missing:
        raise ValidationError(f"run has qids absent from the query file: {missing}")
    rankings: dict[str, list[tuple[str, float]]] = {}
    degraded_qids: list[str] = []
    for qid, ranking in first_stage.rankings.items():
        candidates = tuple(doc_id for doc_id, _ in ranking[:pool_size])
        request = RerankRequest(
            query=queries[qid],
            candidates=candidates,
            view=args.view,
            selection=_selection(args.fields),
        )
        result = rerank(
            request, backend, corpus, pool_size=pool_size, instruction_mode=args.instruction_mode
        )
        rankings[qid] = result.ranking
        if result.degraded:
            degraded_qids.append(qid)
    tag = args.tag or f"{first_stage.tag}+rerank"
    write_run(RankedRun(tag=tag, rankings=rankings), args.out)
    if degraded_qids:
        logger.warning("degraded rankings (failed candidates) for qids: %s", degraded_qids)
    logger.info("reranked %d queries into %s", len(rankings), args.out)


def _cmd_eval(args: argparse.Namespace) -> None:
    run = load_run(args.run)
    queries = load_queries(args.queries)
    qrels = load_qrels(args.qrels)
    ks = tuple(args.k) if args.k else _load_config(args).ks
    report = evaluate(run, qrels, queries, ks=ks)
    print(report.to_table())
    if args.out:
        _emit(_dump_json(report.to_json_dict()), args.out)


def _cmd_ablate(args: argparse.Namespace) -> None:
    docs = load_expanded_corpus(args.corpus)
    queries = load_queries(args.queries)
    qrels = load_qrels(args.qrels)
    config = _load_config(args)
    ks = tuple(args.k) if args.k else config.ks
    emb_backend = make_backend(config, "embed") if args.mode == "dense" else None
    report = ablate(
        args.protocol,
        docs,
        queries,
        qrels,
        mode=args.mode,
        params=SparseIndexParams(k1=config.k1, b=config.b),
        emb_backend=emb_backend,
        ks=ks,
    )
    _emit(_dump_json(report.to_json_dict()), args.out)


def _cmd_simanalysis(args: argparse.Namespace) -> None:
    config = _load_config(args)
    seed = _require_seed(args, config)
    queries = load_queries(args.queries)
    qrels = load_qrels(args.qrels)
    docs = load_expanded_corpus(args.corpus)
    pairs = sample_similarity_pairs(queries, qrels, docs, per_domain_n=args.per_domain, seed=seed)
    report = similarity_analysis(
        pairs,
        queries,
        docs,
        make_backend(config, "embed"),
        selection=_selection(args.fields),
        instruction_mode=args.instruction_mode,
        batch_size=args.batch_size,
    )
    _emit(_dump_json(report.to_json_dict()), args.out)


def _cmd_build_train(args: argparse.Namespace) -> None:
    config = _load_config(args)
    seed = _require_seed(args, config)
    queries = load_queries(args.queries)
    qrels = load_qrels(args.qrels)
    docs = load_any_corpus(args.corpus)
    if args.task == "embed":
        examples: Sequence[Any] = build_embed_train(
            queries,
            qrels,
            docs,
            n_neg=args.n_neg,
            seed=seed,
            view=args.view,
            selection=_selection(args.fields),
            instruction_mode=args.instruction_mode or "concat",
        )
    else:
        examples = build_rerank_train(
            queries,
            qrels,
            docs,
            neg_per_pos=args.neg_per_pos,
            seed=seed,
            view=args.view,
            selection=_selection(args.fields),
            instruction_mode=args.instruction_mode or "query_only",
        )
    export_train(examples, args.format, args.out)
    logger.info("wrote %d %s training examples to %s", len(examples), args.task, args.out)


def _cmd_review_serve(args: argparse.Namespace) -> None:
    import uvicorn

    from toolde.review import create_app

    app = create_app(args.batch, args.journal, ui_dir=args.ui_dir)
    logger.info("serving review UI on http://%s:%d/", args.host, args.port)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


def _cmd_review_export(args: argparse.Namespace) -> None:
    from toolde.review import export_judgments

    _emit(_dump_json(export_judgments(args.batch, args.journal)), args.out)


# ── parser ──


def _add_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file (env vars override backend urls)")


def _add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="random seed (required unless set in config)")


def _add_out(parser: argparse.ArgumentParser, required: bool = False, help: str = "output path") -> None:
    parser.add_argument("--out", required=required, help=help + ("" if required else " (default stdout)"))


def _add_fields(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--fields",
        help="profile fields to render: default | original | full |"
        " add_one:<field> | one_out:<field> | comma list",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="toolde", description=__doc__)
    parser.add_argument("--version", action="version", version=f"toolde {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("canonicalize", help="map raw field names onto the shared schema")
    p.add_argument("--corpus", required=True, help="raw corpus JSONL")
    _add_out(p, required=True, help="canonical corpus JSONL")
    p.set_defaults(func=_cmd_canonicalize)

    p = sub.add_parser("coverage", help="per-dataset canonical field coverage matrix")
    p.add_argument("--corpus", required=True, help="raw corpus JSONL")
    p.add_argument("--json", help="write the report as JSON to this path")
    p.add_argument("--csv", help="write the report as CSV to this path")
    p.set_defaults(func=_cmd_coverage)

    p = sub.add_parser("audit", help="sample documents and ask the judge if they are complete")
    p.add_argument("--corpus", required=True, help="raw or expanded corpus JSONL")
    p.add_argument("--sample", type=int, required=True, help="documents sampled per domain")
    p.add_argument("--max-tokens", type=int, default=8, help="judge generation budget")
    _add_fields(p)
    _add_seed(p)
    _add_config(p)
    _add_out(p)
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("expand", help="run the expansion pipeline over a raw corpus")
    p.add_argument("--corpus", required=True, help="raw corpus JSONL")
    _add_out(p, required=True, help="expanded corpus JSONL")
    p.add_argument("--report", help="write the pipeline report JSON here")
    p.add_argument("--review-batch", help="write the sampled review batch JSON here")
    p.add_argument("--checkpoint", help="checkpoint file for abort/resume")
    p.add_argument("--jobs", type=int, help="parallel documents in flight")
    p.add_argument("--max-tokens", type=int, help="generation budget per call")
    p.add_argument("--review-sample-size", type=int, help="review batch size")
    p.add_argument("--lenient", action="store_true", help="accept tag counts outside 1..5")
    _add_seed(p)
    _add_config(p)
    p.set_defaults(func=_cmd_expand)

    p = sub.add_parser("stats", help="token length statistics for an expanded corpus")
    p.add_argument("--corpus", required=True, help="expanded corpus JSONL")
    p.add_argument("--tokenizer", choices=sorted(TOKENIZERS), default="whitespace")
    _add_fields(p)
    _add_out(p)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("index", help="build a sparse or dense index over a corpus")
    p.add_argument("--corpus", required=True, help="raw or expanded corpus JSONL")
    p.add_argument("--mode", choices=("sparse", "dense"), required=True)
    _add_out(p, required=True, help="index file")
    p.add_argument("--k1", type=float, help="BM25 k1 (sparse mode)")
    p.add_argument("--b", type=float, help="BM25 b (sparse mode)")
    p.add_argument("--batch-size", type=int, default=32, help="embedding batch size (dense mode)")
    _add_fields(p)
    _add_config(p)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("search", help="rank documents for each query against an index")
    p.add_argument("--index", required=True, help="index file from the index command")
    p.add_argument("--queries", required=True, help="queries JSONL")
    p.add_argument("--k", type=int, default=100, help="results per query")
    p.add_argument("--tag", default="toolde", help="run tag for the output file")
    p.add_argument(
        "--instruction-mode",
        choices=("query_only", "concat"),
        help="default: query_only for sparse, concat for dense",
    )
    _add_out(p, required=True, help="ranked run file")
    _add_config(p)
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("rerank", help="rescore a first-stage run with the pointwise reranker")
    p.add_argument("--run", required=True, help="first-stage ranked run file")
    p.add_argument("--queries", required=True, help="queries JSONL")
    p.add_argument("--corpus", required=True, help="raw or expanded corpus JSONL")
    p.add_argument("--pool", type=int, help="candidates per query (top of the run)")
    p.add_argument("--view", choices=("expanded", "original"), default="expanded")
    p.add_argument("--tag", help="run tag (default: <first stage tag>+rerank)")
    p.add_argument("--instruction-mode", choices=("query_only", "concat"), default="query_only")
    _add_fields(p)
    _add_out(p, required=True, help="reranked run file")
    _add_config(p)
    p.set_defaults(func=_cmd_rerank)

    p = sub.add_parser("eval", help="score a ranked run against relevance judgments")
    p.add_argument("--run", required=True, help="ranked run file")
    p.add_argument("--queries", required=True, help="queries JSONL")
    p.add_argument("--qrels", required=True, help="relevance judgments (TREC qrels)")
    p.add_argument("--k", type=int, action="append", help="cutoff, repeatable (default 10)")
    _add_config(p)
    _add_out(p, help="also write the report as JSON")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="field ablation study over an expanded corpus")
    p.add_argument("--protocol", choices=("add_one", "one_out"), required=True)
    p.add_argument("--corpus", required=True, help="expanded corpus JSONL")
    p.add_argument("--queries", required=True, help="queries JSONL")
    p.add_argument("--qrels", required=True, help="relevance judgments (TREC qrels)")
    p.add_argument("--mode", choices=("sparse", "dense"), default="sparse")
    p.add_argument("--k", type=int, action="append", help="cutoff, repeatable (default 10)")
    _add_config(p)
    _add_out(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("simanalysis", help="query/document embedding similarity by pair polarity")
    p.add_argument("--queries", required=True, help="queries JSONL")
    p.add_argument("--qrels", required=True, help="relevance judgments (TREC qrels)")
    p.add_argument("--corpus", required=True, help="expanded corpus JSONL")
    p.add_argument("--per-domain", type=int, required=True, help="pairs sampled per domain")
    p.add_argument("--instruction-mode", choices=("query_only", "concat"), default="concat")
    p.add_argument("--batch-size", type=int, default=64, help="embedding batch size")
    _add_fields(p)
    _add_seed(p)
    _add_config(p)
    _add_out(p)
    p.set_defaults(func=_cmd_simanalysis)

    p = sub.add_parser("build-train", help="export contrastive or pointwise training examples")
    p.add_argument("--task", choices=("embed", "rerank"), required=True)
    p.add_argument("--queries", required=True, help="queries JSONL")
    p.add_argument("--qrels", required=True, help="relevance judgments (TREC qrels)")
    p.add_argument("--corpus", required=True, help="raw or expanded corpus JSONL")
    p.add_argument("--format", choices=("jsonl_pairs", "jsonl_messages"), default="jsonl_pairs")
    p.add_argument("--n-neg", type=int, default=5, help="negatives per query (embed task)")
    p.add_argument("--neg-per-pos", type=int, default=3, help="negatives per positive (rerank task)")
    p.add_argument("--view", choices=("expanded", "original"), default="expanded")
    p.add_argument("--instruction-mode", choices=("query_only", "concat"))
    _add_fields(p)
    _add_seed(p)
    _add_config(p)
    _add_out(p, required=True, help="training JSONL")
    p.set_defaults(func=_cmd_build_train)

    p = sub.add_parser("review-serve", help="serve the human review API and UI")
    p.add_argument("--batch", required=True, help="review batch JSON from the expand command")
    p.add_argument("--journal", required=True, help="append-only judgment journal (JSONL)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8400)
    p.add_argument("--ui-dir", help="static UI directory to mount at /")
    p.set_defaults(func=_cmd_review_serve)

    p = sub.add_parser("review-export", help="export judged and pending review items")
    p.add_argument("--batch", required=True, help="review batch JSON")
    p.add_argument("--journal", required=True, help="judgment journal (JSONL)")
    _add_out(p)
    p.set_defaults(func=_cmd_review_export)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (ValidationError, ParseError) as exc:
        logger.error("%s", exc)
        return 1
    except (BackendUnavailable, ProtocolError) as exc:
        logger.error("%s", exc)
        return 2
    except OSError as exc:
        logger.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
