"""Pointwise rerank scoring, prompt construction, and degraded results."""

import math
import random

import pytest

from conftest import make_doc, make_expanded, make_query
from oracles import ref_relevance_probability
from toolde.backends import ScriptedRerankBackend
from toolde.corpus import FieldSelection, render_document_text
from toolde.errors import ValidationError
from toolde.prompts import load_template
from toolde.rerank import (
    FAILED_SCORE_SENTINEL,
    RerankRequest,
    build_rerank_prompt,
    relevance_probability,
    rerank,
)


def test_probability_matches_textbook_sigmoid_in_safe_range() -> None:
    rng = random.Random(13)
    for _ in range(500):
        logit_true = rng.uniform(-30, 30)
        logit_false = rng.uniform(-30, 30)
        expected = ref_relevance_probability(logit_true, logit_false)
        assert relevance_probability(logit_true, logit_false) == pytest.approx(
            expected, abs=1e-12
        )


def test_probability_extremes_do_not_overflow() -> None:
    assert relevance_probability(1e4, -1e4) == 1.0
    assert relevance_probability(-1e4, 1e4) == 0.0
    assert relevance_probability(710.0, 0.0) == pytest.approx(1.0)
    assert relevance_probability(0.0, 710.0) == pytest.approx(0.0, abs=1e-300)


def test_probability_rejects_non_finite_logits() -> None:
    for bad in (math.inf, -math.inf, math.nan):
        with pytest.raises(ValidationError):
            relevance_probability(bad, 0.0)
        with pytest.raises(ValidationError):
            relevance_probability(0.0, bad)


def test_build_rerank_prompt_fills_both_markers_single_pass() -> None:
    template = load_template("rerank")
    prompt = build_rerank_prompt("the query", "the document")
    assert "FILL_QUERY_HERE" not in prompt and "FILL_DOCUMENT_HERE" not in prompt
    assert "the query" in prompt and "the document" in prompt
    assert prompt.endswith(template[template.index("FILL_DOCUMENT_HERE") + len("FILL_DOCUMENT_HERE"):])
    # Document text containing a marker is spliced verbatim, not re-expanded.
    tricky = build_rerank_prompt("q", "contains FILL_QUERY_HERE marker")
    assert "contains FILL_QUERY_HERE marker" in tricky


def test_rerank_request_validation() -> None:
    query = make_query(1)
    with pytest.raises(ValidationError):
        RerankRequest(query=query, candidates=())
    with pytest.raises(ValidationError):
        RerankRequest(query=query, candidates=("a", "a"))
    with pytest.raises(ValidationError):
        RerankRequest(query=query, candidates=("a",), view="sideways")


def _corpus(n: int) -> dict:
    docs = {}
    for i in range(n):
        doc = make_doc(i, body={"name": f"tool_{i}", "description": f"does thing {i}"})
        docs[doc.id] = make_expanded(doc)
    return docs


def test_rerank_orders_by_probability_with_stable_ties() -> None:
    corpus = _corpus(4)
    logits = {"d0": (0.0, 0.0), "d1": (2.0, 0.0), "d2": (0.0, 0.0), "d3": (-2.0, 0.0)}

    def script(prompt: str):
        for doc_id, pair in logits.items():
            if f"tool_{doc_id[1:]}" in prompt:
                return pair
        raise AssertionError("unmatched prompt")

    request = RerankRequest(query=make_query(1), candidates=("d0", "d1", "d2", "d3"))
    result = rerank(request, ScriptedRerankBackend(script), corpus)
    assert [doc_id for doc_id, _ in result.ranking] == ["d1", "d0", "d2", "d3"]
    assert result.degraded is False and result.failed == ()
    probabilities = dict(result.ranking)
    assert probabilities["d0"] == 0.5 == probabilities["d2"]
    assert probabilities["d1"] == pytest.approx(ref_relevance_probability(2.0, 0.0), abs=1e-12)


def test_rerank_failed_candidates_sink_with_sentinel() -> None:
    corpus = _corpus(3)
    backend = ScriptedRerankBackend(lambda p: (3.0, 0.0), fail_for=lambda p: "tool_1" in p)
    backend._sleep = lambda _: None
    request = RerankRequest(query=make_query(1), candidates=("d0", "d1", "d2"))
    result = rerank(request, backend, corpus)
    assert result.degraded is True
    assert result.failed == ("d1",)
    assert result.ranking[-1] == ("d1", FAILED_SCORE_SENTINEL)
    assert [doc_id for doc_id, _ in result.ranking] == ["d0", "d2", "d1"]


def test_rerank_validates_pool_and_corpus_membership() -> None:
    corpus = _corpus(2)
    backend = ScriptedRerankBackend(lambda p: (0.0, 0.0))
    request = RerankRequest(query=make_query(1), candidates=("d0", "d1"))
    with pytest.raises(ValidationError, match="pool"):
        rerank(request, backend, corpus, pool_size=1)
    ghost = RerankRequest(query=make_query(1), candidates=("d0", "ghost"))
    with pytest.raises(ValidationError, match="ghost"):
        rerank(ghost, backend, corpus)


def test_rerank_prompt_uses_requested_view_and_instruction_mode() -> None:
    corpus = _corpus(1)
    prompts: list[str] = []

    def script(prompt: str):
        prompts.append(prompt)
        return (0.0, 0.0)

    query = make_query(1, text="the query", instruction="the instruction")
    expanded_doc = corpus["d0"]

    rerank(RerankRequest(query=query, candidates=("d0",)), ScriptedRerankBackend(script), corpus)
    assert render_document_text(expanded_doc) in prompts[0]
    assert "the query" in prompts[0] and "the instruction" not in prompts[0]

    rerank(
        RerankRequest(query=query, candidates=("d0",), view="original"),
        ScriptedRerankBackend(script), corpus,
    )
    assert render_document_text(expanded_doc.original) in prompts[1]
    assert "tool_profile" not in prompts[1]

    rerank(
        RerankRequest(query=query, candidates=("d0",)),
        ScriptedRerankBackend(script), corpus, instruction_mode="concat",
    )
    assert "the instruction\nthe query" in prompts[2]

    rerank(
        RerankRequest(query=query, candidates=("d0",), selection=FieldSelection.full_profile()),
        ScriptedRerankBackend(script), corpus,
    )
    assert "example_usage" in prompts[3] and "example_usage" not in prompts[0]
