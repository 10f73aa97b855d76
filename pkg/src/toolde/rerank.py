"""Pointwise second-stage reranking over a first-stage candidate pool.

Each candidate is scored independently: the prompt template is filled with
the query and the rendered document, the backend returns logits for the
"true" and "false" answer tokens, and the relevance probability is the
softmax of the pair. Reranking reorders candidates; it never adds or drops
any.
"""

import logging
import math
from dataclasses import dataclass
from typing import Mapping

from toolde.corpus import (
    ExpandedDocument,
    FieldSelection,
    Query,
    RawToolDocument,
    render_document_text,
)
from toolde.errors import BackendUnavailable, ValidationError
from toolde.prompts import fill_template, load_template
from toolde.retrieval import DEFAULT_POOL_SIZE

logger = logging.getLogger(__name__)

FAILED_SCORE_SENTINEL = -1.0

VIEWS = ("expanded", "original")


@dataclass(frozen=True)
class RerankRequest:
    """One query with its first-stage candidate ids, in first-stage order."""

    query: Query
    candidates: tuple[str, ...]
    view: str = "expanded"
    selection: FieldSelection | None = None

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValidationError(f"query {self.query.qid!r}: empty candidate pool")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValidationError(f"query {self.query.qid!r}: duplicate candidates")
        if self.view not in VIEWS:
            raise ValidationError(
                f"query {self.query.qid!r}: view {self.view!r} not one of {VIEWS}"
            )


@dataclass
class RerankResult:
    """Reordered (doc id, probability) pairs; failed candidates carry the
    sentinel score and sink to the bottom, marking the result degraded."""

    ranking: list[tuple[str, float]]
    degraded: bool
    failed: tuple[str, ...]


def build_rerank_prompt(query_text: str, doc_text: str) -> str:
    """Fill the prompt template single-pass; fills are never re-scanned."""
    return fill_template(
        load_template("rerank"),
        {"FILL_QUERY_HERE": query_text, "FILL_DOCUMENT_HERE": doc_text},
    )


def relevance_probability(logit_true: float, logit_false: float) -> float:
    """P(relevant) = exp(lt) / (exp(lt) + exp(lf)), computed overflow-safely.

    Equivalent to a sigmoid of (lt - lf); exact 0.5 for equal logits and
    shift-invariant, stable for |logits| up to 1e4 and beyond.
    """
    if not (math.isfinite(logit_true) and math.isfinite(logit_false)):
        raise ValidationError("logits must be finite")
    gap = logit_false - logit_true
    if gap >= 0.0:
        expo = math.exp(-gap)
        return expo / (1.0 + expo)
    return 1.0 / (1.0 + math.exp(gap))


def _candidate_text(
    doc: "RawToolDocument | ExpandedDocument", view: str, selection: FieldSelection | None
) -> str:
    if view == "original":
        return render_document_text(doc, FieldSelection.original_only())
    return render_document_text(doc, selection)


def rerank(
    request: RerankRequest,
    backend,
    corpus: Mapping[str, "RawToolDocument | ExpandedDocument"],
    pool_size: int = DEFAULT_POOL_SIZE,
    instruction_mode: str = "query_only",
) -> RerankResult:
    """Score every candidate and sort by probability, descending.

    Ties keep first-stage order (stable sort). A candidate whose backend call
    still fails after retries gets the sentinel score -1 and the result is
    marked degraded; any other backend error propagates.
    """
    if len(request.candidates) > pool_size:
        raise ValidationError(
            f"query {request.query.qid!r}: {len(request.candidates)} candidates"
            f" exceed pool size {pool_size}"
        )
    if instruction_mode not in ("query_only", "concat"):
        raise ValidationError(f"unknown instruction_mode {instruction_mode!r}")
    missing = [doc_id for doc_id in request.candidates if doc_id not in corpus]
    if missing:
        raise ValidationError(
            f"query {request.query.qid!r}: candidates not in corpus: {missing}"
        )
    query_text = request.query.text
    if instruction_mode == "concat" and request.query.instruction:
        query_text = request.query.instruction + "\n" + request.query.text
    scored: list[tuple[str, float]] = []
    failed: list[str] = []
    for doc_id in request.candidates:
        text = _candidate_text(corpus[doc_id], request.view, request.selection)
        prompt = build_rerank_prompt(query_text, text)
        try:
            logit_true, logit_false = backend.rerank_logits(prompt)
        except BackendUnavailable as exc:
            logger.warning(
                "query %s candidate %s: %s; assigning sentinel score",
                request.query.qid, doc_id, exc,
            )
            failed.append(doc_id)
            scored.append((doc_id, FAILED_SCORE_SENTINEL))
            continue
        scored.append((doc_id, relevance_probability(logit_true, logit_false)))
    # sorted() is stable, so equal probabilities keep first-stage order.
    ranking = sorted(scored, key=lambda pair: -pair[1])
    return RerankResult(ranking=ranking, degraded=bool(failed), failed=tuple(failed))
