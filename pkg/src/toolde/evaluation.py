"""Ranking metrics, per-domain evaluation, field ablations, and similarity
analysis.

Relevance is binary. NDCG@K discounts hits at 1-based rank i by 1/log2(i+1),
with the ideal normalizer truncated at min(|gold|, K). The headline average is
the unweighted mean of the per-domain means; the per-query (micro) mean is
also reported.
"""

import math
import random
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from toolde.corpus import (
    DOMAINS,
    PROFILE_FIELDS,
    ExpandedDocument,
    FieldSelection,
    Query,
    RankedRun,
    render_document_text,
)
from toolde.errors import ValidationError
from toolde.retrieval import (
    SparseIndexParams,
    build_dense_index,
    build_sparse_index,
    query_text,
    search_dense,
    search_sparse,
)

METRICS = ("ndcg", "recall", "completeness")

DEFAULT_KS = (10,)


def _check_metric_args(gold: set[str], k: int) -> None:
    if not gold:
        raise ValidationError("gold set must be non-empty")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")


def ndcg_at_k(ranked_ids: Sequence[str], gold: set[str], k: int) -> float:
    """Binary-gain NDCG@K; empty ranking scores 0."""
    _check_metric_args(gold, k)
    dcg = 0.0
    for i, doc_id in enumerate(ranked_ids[:k], start=1):
        if doc_id in gold:
            dcg += 1.0 / math.log2(i + 1)
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(len(gold), k) + 1))
    return dcg / ideal


def recall_at_k(ranked_ids: Sequence[str], gold: set[str], k: int) -> float:
    """Fraction of gold documents in the top k."""
    _check_metric_args(gold, k)
    hits = sum(1 for doc_id in ranked_ids[:k] if doc_id in gold)
    return hits / len(gold)


def completeness_at_k(ranked_ids: Sequence[str], gold: set[str], k: int) -> float:
    """1.0 iff every gold document appears in the top k, else 0.0."""
    _check_metric_args(gold, k)
    return 1.0 if gold.issubset(set(ranked_ids[:k])) else 0.0


_METRIC_FNS = {"ndcg": ndcg_at_k, "recall": recall_at_k, "completeness": completeness_at_k}


@dataclass
class EvalReport:
    """Per-query, per-domain, and averaged metric values for one run."""

    tag: str
    ks: tuple[int, ...]
    per_query: dict[str, dict[str, float]]
    per_domain: dict[str, dict[str, float]]
    domain_counts: dict[str, int]
    average: dict[str, float]
    micro_average: dict[str, float]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "tag": self.tag,
            "ks": list(self.ks),
            "per_query": self.per_query,
            "per_domain": self.per_domain,
            "domain_counts": self.domain_counts,
            "average": self.average,
            "micro_average": self.micro_average,
        }

    def to_table(self) -> str:
        """Aligned text table: metric rows, domain columns plus the macro avg."""
        domains = [d for d in DOMAINS if d in self.per_domain]
        headers = ["metric"] + domains + ["avg"]
        rows: list[list[str]] = []
        for k in self.ks:
            for metric in METRICS:
                key = f"{metric}@{k}"
                cells = [key]
                cells += [f"{self.per_domain[d][key]:.4f}" for d in domains]
                cells.append(f"{self.average[key]:.4f}")
                rows.append(cells)
        widths = [
            max(len(headers[col]), *(len(row[col]) for row in rows))
            for col in range(len(headers))
        ]
        def fmt(cells: list[str]) -> str:
            first = cells[0].ljust(widths[0])
            rest = [cells[i].rjust(widths[i]) for i in range(1, len(cells))]
            return "  ".join([first] + rest)
        return "\n".join([fmt(headers)] + [fmt(row) for row in rows]) + "\n"


def metric_keys(ks: Sequence[int]) -> list[str]:
    return [f"{metric}@{k}" for k in ks for metric in METRICS]


def evaluate(
    run: RankedRun,
    qrels: Mapping[str, set[str]],
    queries: Sequence[Query],
    ks: Sequence[int] = DEFAULT_KS,
) -> EvalReport:
    """Score a run against judgments over the given query set.

    Every evaluated query needs judgments, and every run qid must belong to
    the query set (its domain decides the macro average); violations fail
    fast listing the offending qids. Queries absent from the run score 0.
    """
    if not queries:
        raise ValidationError("query set must be non-empty")
    if not ks or any(k < 1 for k in ks):
        raise ValidationError(f"ks must be >= 1, got {list(ks)}")
    qids = {q.qid for q in queries}
    unjudged = sorted(qid for qid in qids if qid not in qrels or not qrels[qid])
    if unjudged:
        raise ValidationError(f"queries without judgments: {unjudged}")
    unknown = sorted(qid for qid in run.rankings if qid not in qids)
    if unknown:
        raise ValidationError(f"run qids not in the query set: {unknown}")
    keys = metric_keys(ks)
    per_query: dict[str, dict[str, float]] = {}
    for query in queries:
        ranked_ids = [doc_id for doc_id, _ in run.rankings.get(query.qid, [])]
        gold = qrels[query.qid]
        values: dict[str, float] = {}
        for k in ks:
            for metric in METRICS:
                values[f"{metric}@{k}"] = _METRIC_FNS[metric](ranked_ids, gold, k)
        per_query[query.qid] = values
    per_domain: dict[str, dict[str, float]] = {}
    domain_counts: dict[str, int] = {}
    for domain in DOMAINS:
        members = [q.qid for q in queries if q.domain == domain]
        if not members:
            continue
        domain_counts[domain] = len(members)
        per_domain[domain] = {
            key: sum(per_query[qid][key] for qid in members) / len(members)
            for key in keys
        }
    average = {
        key: sum(per_domain[d][key] for d in per_domain) / len(per_domain)
        for key in keys
    }
    micro_average = {
        key: sum(per_query[qid][key] for qid in per_query) / len(per_query)
        for key in keys
    }
    return EvalReport(
        tag=run.tag,
        ks=tuple(ks),
        per_query=per_query,
        per_domain=per_domain,
        domain_counts=domain_counts,
        average=average,
        micro_average=micro_average,
    )


# ── Field ablations ──

ABLATION_PROTOCOLS = ("add_one", "one_out")


def ablation_variants() -> list[tuple[str, FieldSelection]]:
    """The full 12-variant matrix: 2 baselines, 5 add-one, 5 one-out."""
    variants: list[tuple[str, FieldSelection]] = [
        ("original", FieldSelection.original_only()),
        ("full", FieldSelection.full_profile()),
    ]
    variants += [(f"add_one:{name}", FieldSelection.add_one(name)) for name in PROFILE_FIELDS]
    variants += [(f"one_out:{name}", FieldSelection.one_out(name)) for name in PROFILE_FIELDS]
    return variants


@dataclass
class AblationRow:
    label: str
    fields: tuple[str, ...]
    applicable: bool
    average: dict[str, float] | None
    per_domain: dict[str, dict[str, float]] | None

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "fields": list(self.fields),
            "applicable": self.applicable,
            "average": self.average,
            "per_domain": self.per_domain,
        }


@dataclass
class AblationReport:
    """One protocol's five field rows plus the two shared baselines."""

    protocol: str
    ks: tuple[int, ...]
    baselines: list[AblationRow]
    rows: list[AblationRow]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "protocol": self.protocol,
            "ks": list(self.ks),
            "baselines": [row.to_json_dict() for row in self.baselines],
            "rows": [row.to_json_dict() for row in self.rows],
        }


def _run_retriever(
    docs: Sequence[ExpandedDocument],
    selection: FieldSelection,
    queries: Sequence[Query],
    mode: str,
    params: SparseIndexParams | None,
    emb_backend,
    k: int,
    tag: str,
    batch_size: int = 32,
) -> RankedRun:
    texts = [(doc.id, render_document_text(doc, selection)) for doc in docs]
    rankings: dict[str, list[tuple[str, float]]] = {}
    if mode == "sparse":
        index = build_sparse_index(texts, params)
        for query in queries:
            rankings[query.qid] = search_sparse(index, query, k)
    elif mode == "dense":
        if emb_backend is None:
            raise ValidationError("dense ablation needs an embedding backend")
        index = build_dense_index(texts, emb_backend, batch_size=batch_size)
        for query in queries:
            rankings[query.qid] = search_dense(index, query, emb_backend, k)
    else:
        raise ValidationError(f"unknown retriever mode {mode!r}")
    return RankedRun(tag=tag, rankings=rankings)


def _field_present(docs: Sequence[ExpandedDocument], name: str) -> bool:
    return any(doc.profile.has_field(name) for doc in docs)


def ablate(
    protocol: str,
    docs: Sequence[ExpandedDocument],
    queries: Sequence[Query],
    qrels: Mapping[str, set[str]],
    mode: str = "sparse",
    params: SparseIndexParams | None = None,
    emb_backend=None,
    ks: Sequence[int] = DEFAULT_KS,
) -> AblationReport:
    """Evaluate one ablation protocol: 5 per-field variants + 2 baselines.

    A field no document carries is reported as a not-applicable row instead
    of silently duplicating a baseline measurement.
    """
    if protocol not in ABLATION_PROTOCOLS:
        raise ValidationError(f"protocol {protocol!r} not one of {ABLATION_PROTOCOLS}")
    if not docs:
        raise ValidationError("cannot ablate an empty corpus")
    k = max(ks)

    def measure(label: str, selection: FieldSelection) -> AblationRow:
        run = _run_retriever(docs, selection, queries, mode, params, emb_backend, k, label)
        report = evaluate(run, qrels, queries, ks)
        return AblationRow(
            label=label,
            fields=tuple(sorted(selection.fields)),
            applicable=True,
            average=report.average,
            per_domain=report.per_domain,
        )

    baselines = [
        measure("original", FieldSelection.original_only()),
        measure("full", FieldSelection.full_profile()),
    ]
    rows: list[AblationRow] = []
    for name in PROFILE_FIELDS:
        label = f"{protocol}:{name}"
        selection = (
            FieldSelection.add_one(name)
            if protocol == "add_one"
            else FieldSelection.one_out(name)
        )
        if not _field_present(docs, name):
            rows.append(
                AblationRow(
                    label=label,
                    fields=tuple(sorted(selection.fields)),
                    applicable=False,
                    average=None,
                    per_domain=None,
                )
            )
            continue
        rows.append(measure(label, selection))
    return AblationReport(protocol=protocol, ks=tuple(ks), baselines=baselines, rows=rows)


# ── Query-document similarity analysis ──


@dataclass(frozen=True)
class SimilarityPair:
    qid: str
    domain: str
    positive_id: str
    negative_id: str


def sample_similarity_pairs(
    queries: Sequence[Query],
    qrels: Mapping[str, set[str]],
    docs: Sequence[ExpandedDocument],
    per_domain_n: int,
    seed: int,
) -> list[SimilarityPair]:
    """Seeded sample: per domain, up to per_domain_n queries, one gold
    positive and one same-domain non-gold negative each."""
    if per_domain_n < 1:
        raise ValidationError("per_domain_n must be >= 1")
    by_domain_docs: dict[str, list[str]] = {}
    for doc in docs:
        by_domain_docs.setdefault(doc.domain, []).append(doc.id)
    rng = random.Random(seed)
    pairs: list[SimilarityPair] = []
    for domain in DOMAINS:
        domain_doc_ids = by_domain_docs.get(domain, [])
        candidates = [
            q
            for q in queries
            if q.domain == domain
            and qrels.get(q.qid)
            and any(doc_id in qrels[q.qid] for doc_id in domain_doc_ids)
        ]
        if not candidates:
            continue
        if len(candidates) > per_domain_n:
            order = {q.qid: i for i, q in enumerate(queries)}
            candidates = sorted(rng.sample(candidates, per_domain_n), key=lambda q: order[q.qid])
        for query in candidates:
            gold = qrels[query.qid]
            positives = sorted(doc_id for doc_id in domain_doc_ids if doc_id in gold)
            negatives = sorted(doc_id for doc_id in domain_doc_ids if doc_id not in gold)
            if not negatives:
                raise ValidationError(
                    f"query {query.qid!r}: no same-domain non-gold documents to sample"
                )
            pairs.append(
                SimilarityPair(
                    qid=query.qid,
                    domain=domain,
                    positive_id=rng.choice(positives),
                    negative_id=rng.choice(negatives),
                )
            )
    if not pairs:
        raise ValidationError("no queries eligible for similarity analysis")
    return pairs


@dataclass
class SimilarityReport:
    """Mean query-doc cosine for gold and non-gold pairs under both views."""

    per_domain: dict[str, dict[str, float]]

    def to_json_dict(self) -> dict[str, Any]:
        return {"per_domain": self.per_domain}


def similarity_analysis(
    pairs: Sequence[SimilarityPair],
    queries: Sequence[Query],
    docs: Sequence[ExpandedDocument],
    emb_backend,
    selection: FieldSelection | None = None,
    instruction_mode: str = "concat",
    batch_size: int = 64,
) -> SimilarityReport:
    """Score identical (query, doc) pairs under expanded and original views.

    Reports per-domain means for positives and negatives under each view and
    the per-pair deltas (expanded minus original).
    """
    if not pairs:
        raise ValidationError("similarity analysis needs at least one pair")
    sel = selection if selection is not None else FieldSelection.default_retrieval()
    queries_by_qid = {q.qid: q for q in queries}
    docs_by_id = {doc.id: doc for doc in docs}
    missing_q = sorted({p.qid for p in pairs} - set(queries_by_qid))
    if missing_q:
        raise ValidationError(f"pairs reference unknown qids: {missing_q}")
    texts: list[str] = []
    index_of: dict[str, int] = {}

    def text_slot(text: str) -> int:
        if text not in index_of:
            index_of[text] = len(texts)
            texts.append(text)
        return index_of[text]

    jobs: list[tuple[SimilarityPair, int, int, int, int, int]] = []
    for pair in pairs:
        for doc_id in (pair.positive_id, pair.negative_id):
            if doc_id not in docs_by_id:
                raise ValidationError(f"pair for {pair.qid!r}: unknown doc {doc_id!r}")
        qtext = query_text(queries_by_qid[pair.qid], instruction_mode)
        pos, neg = docs_by_id[pair.positive_id], docs_by_id[pair.negative_id]
        jobs.append(
            (
                pair,
                text_slot(qtext),
                text_slot(render_document_text(pos, sel)),
                text_slot(render_document_text(pos, FieldSelection.original_only())),
                text_slot(render_document_text(neg, sel)),
                text_slot(render_document_text(neg, FieldSelection.original_only())),
            )
        )
    vectors: list[list[float]] = []
    for start in range(0, len(texts), batch_size):
        vectors.extend(emb_backend.embed(texts[start : start + batch_size]))
    units: list[Any] = [None] * len(texts)

    def unit(i: int) -> Any:
        if units[i] is None:
            array = np.asarray(vectors[i], dtype=np.float64)
            norm = float(np.linalg.norm(array))
            if norm == 0.0:
                raise ValidationError(f"zero embedding for text {texts[i][:60]!r}")
            units[i] = array / norm
        return units[i]

    sums: dict[str, dict[str, float]] = {}
    counts: dict[str, int] = {}
    for pair, qi, pe, po, ne, no in jobs:
        bucket = sums.setdefault(
            pair.domain,
            {
                "positive_expanded": 0.0,
                "positive_original": 0.0,
                "negative_expanded": 0.0,
                "negative_original": 0.0,
            },
        )
        qv = unit(qi)
        bucket["positive_expanded"] += float(qv @ unit(pe))
        bucket["positive_original"] += float(qv @ unit(po))
        bucket["negative_expanded"] += float(qv @ unit(ne))
        bucket["negative_original"] += float(qv @ unit(no))
        counts[pair.domain] = counts.get(pair.domain, 0) + 1
    per_domain: dict[str, dict[str, float]] = {}
    for domain, bucket in sums.items():
        n = counts[domain]
        means = {key: value / n for key, value in bucket.items()}
        means["positive_delta"] = means["positive_expanded"] - means["positive_original"]
        means["negative_delta"] = means["negative_expanded"] - means["negative_original"]
        means["pairs"] = float(n)
        per_domain[domain] = means
    return SimilarityReport(per_domain=per_domain)
