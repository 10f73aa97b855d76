"""Training corpora for embedding and rerank fine-tuning.

Embedding examples pair each (query, gold doc) with n_neg seeded negatives
drawn from outside the query's gold set. Rerank examples add, per gold doc,
one true-labeled prompt and neg_per_pos false-labeled prompts. Exports are
JSONL and round-trip losslessly.
"""

import json
import random
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from toolde.corpus import (
    ExpandedDocument,
    FieldSelection,
    Query,
    RawToolDocument,
    render_document_text,
)
from toolde.errors import ParseError, ValidationError
from toolde.rerank import build_rerank_prompt
from toolde.retrieval import query_text

VIEWS = ("expanded", "original")
EXPORT_FORMATS = ("jsonl_pairs", "jsonl_messages")


@dataclass(frozen=True)
class EmbedTrainExample:
    """One positive pair with its sampled negatives (ids kept for provenance)."""

    qid: str
    query: str
    positive_id: str
    positive: str
    negative_ids: tuple[str, ...]
    negatives: tuple[str, ...]


@dataclass(frozen=True)
class RerankTrainExample:
    """One filled rerank prompt; label is True exactly for gold documents."""

    qid: str
    doc_id: str
    prompt: str
    label: bool


def _doc_text(
    doc: "RawToolDocument | ExpandedDocument", view: str, selection: FieldSelection | None
) -> str:
    if view == "original":
        return render_document_text(doc, FieldSelection.original_only())
    return render_document_text(doc, selection)


def _check_view(view: str) -> None:
    if view not in VIEWS:
        raise ValidationError(f"view {view!r} not one of {VIEWS}")


def build_embed_train(
    queries: Sequence[Query],
    qrels: Mapping[str, set[str]],
    docs: Sequence["RawToolDocument | ExpandedDocument"],
    n_neg: int = 5,
    seed: int = 0,
    view: str = "expanded",
    selection: FieldSelection | None = None,
    instruction_mode: str = "concat",
) -> list[EmbedTrainExample]:
    """One example per (query, gold doc); negatives sampled uniformly without
    replacement from the corpus minus the query's gold set.

    Deterministic for a fixed seed; fails naming the query when fewer than
    n_neg negatives exist.
    """
    if n_neg < 1:
        raise ValidationError("n_neg must be >= 1")
    _check_view(view)
    by_id = {doc.id: doc for doc in docs}
    if len(by_id) != len(docs):
        raise ValidationError("corpus has duplicate document ids")
    all_ids = [doc.id for doc in docs]
    rng = random.Random(seed)
    examples: list[EmbedTrainExample] = []
    for query in queries:
        gold = qrels.get(query.qid)
        if not gold:
            continue
        missing = sorted(doc_id for doc_id in gold if doc_id not in by_id)
        if missing:
            raise ValidationError(
                f"query {query.qid!r}: gold docs not in corpus: {missing}"
            )
        pool = [doc_id for doc_id in all_ids if doc_id not in gold]
        if len(pool) < n_neg:
            raise ValidationError(
                f"query {query.qid!r}: only {len(pool)} non-gold docs available,"
                f" need {n_neg} negatives"
            )
        qtext = query_text(query, instruction_mode)
        for positive_id in sorted(gold):
            negative_ids = tuple(rng.sample(pool, n_neg))
            examples.append(
                EmbedTrainExample(
                    qid=query.qid,
                    query=qtext,
                    positive_id=positive_id,
                    positive=_doc_text(by_id[positive_id], view, selection),
                    negative_ids=negative_ids,
                    negatives=tuple(
                        _doc_text(by_id[doc_id], view, selection) for doc_id in negative_ids
                    ),
                )
            )
    return examples


def build_rerank_train(
    queries: Sequence[Query],
    qrels: Mapping[str, set[str]],
    docs: Sequence["RawToolDocument | ExpandedDocument"],
    neg_per_pos: int = 3,
    seed: int = 0,
    view: str = "expanded",
    selection: FieldSelection | None = None,
    instruction_mode: str = "query_only",
) -> list[RerankTrainExample]:
    """Per (query, gold doc): one true example plus neg_per_pos false ones."""
    if neg_per_pos < 1:
        raise ValidationError("neg_per_pos must be >= 1")
    _check_view(view)
    by_id = {doc.id: doc for doc in docs}
    if len(by_id) != len(docs):
        raise ValidationError("corpus has duplicate document ids")
    all_ids = [doc.id for doc in docs]
    rng = random.Random(seed)
    examples: list[RerankTrainExample] = []
    for query in queries:
        gold = qrels.get(query.qid)
        if not gold:
            continue
        missing = sorted(doc_id for doc_id in gold if doc_id not in by_id)
        if missing:
            raise ValidationError(
                f"query {query.qid!r}: gold docs not in corpus: {missing}"
            )
        pool = [doc_id for doc_id in all_ids if doc_id not in gold]
        if len(pool) < neg_per_pos:
            raise ValidationError(
                f"query {query.qid!r}: only {len(pool)} non-gold docs available,"
                f" need {neg_per_pos} negatives"
            )
        qtext = query_text(query, instruction_mode)
        for positive_id in sorted(gold):
            examples.append(
                RerankTrainExample(
                    qid=query.qid,
                    doc_id=positive_id,
                    prompt=build_rerank_prompt(qtext, _doc_text(by_id[positive_id], view, selection)),
                    label=True,
                )
            )
            for negative_id in rng.sample(pool, neg_per_pos):
                examples.append(
                    RerankTrainExample(
                        qid=query.qid,
                        doc_id=negative_id,
                        prompt=build_rerank_prompt(qtext, _doc_text(by_id[negative_id], view, selection)),
                        label=False,
                    )
                )
    return examples


# ── Export / import ──


def _embed_record(example: EmbedTrainExample, fmt: str) -> dict[str, Any]:
    if fmt == "jsonl_pairs":
        return {
            "qid": example.qid,
            "query": example.query,
            "pos_id": example.positive_id,
            "pos": example.positive,
            "neg_ids": list(example.negative_ids),
            "negs": list(example.negatives),
        }
    return {
        "qid": example.qid,
        "pos_id": example.positive_id,
        "neg_ids": list(example.negative_ids),
        "messages": [
            {"role": "user", "content": example.query},
            {"role": "assistant", "content": example.positive},
        ],
        "negs": list(example.negatives),
    }


def _rerank_record(example: RerankTrainExample, fmt: str) -> dict[str, Any]:
    if fmt == "jsonl_pairs":
        return {
            "qid": example.qid,
            "doc_id": example.doc_id,
            "prompt": example.prompt,
            "label": example.label,
        }
    return {
        "qid": example.qid,
        "doc_id": example.doc_id,
        "messages": [
            {"role": "user", "content": example.prompt},
            {"role": "assistant", "content": "true" if example.label else "false"},
        ],
    }


def export_train(
    examples: Sequence["EmbedTrainExample | RerankTrainExample"],
    fmt: str,
    path: str,
) -> None:
    """Write examples as JSONL in the chosen schema."""
    if fmt not in EXPORT_FORMATS:
        raise ValidationError(f"format {fmt!r} not one of {EXPORT_FORMATS}")
    if not examples:
        raise ValidationError("no training examples to export")
    with open(path, "w", encoding="utf-8") as handle:
        for example in examples:
            if isinstance(example, EmbedTrainExample):
                record = _embed_record(example, fmt)
            elif isinstance(example, RerankTrainExample):
                record = _rerank_record(example, fmt)
            else:
                raise ValidationError(f"unknown example type {type(example).__name__}")
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_train(
    path: str, task: str, fmt: str
) -> "list[EmbedTrainExample] | list[RerankTrainExample]":
    """Read an exported file back into example objects (lossless round-trip)."""
    if task not in ("embed", "rerank"):
        raise ValidationError(f"task {task!r} not one of ('embed', 'rerank')")
    if fmt not in EXPORT_FORMATS:
        raise ValidationError(f"format {fmt!r} not one of {EXPORT_FORMATS}")
    out: list[Any] = []
    with open(path, encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=number)
            try:
                if task == "embed" and fmt == "jsonl_pairs":
                    out.append(
                        EmbedTrainExample(
                            qid=obj["qid"],
                            query=obj["query"],
                            positive_id=obj["pos_id"],
                            positive=obj["pos"],
                            negative_ids=tuple(obj["neg_ids"]),
                            negatives=tuple(obj["negs"]),
                        )
                    )
                elif task == "embed":
                    out.append(
                        EmbedTrainExample(
                            qid=obj["qid"],
                            query=obj["messages"][0]["content"],
                            positive_id=obj["pos_id"],
                            positive=obj["messages"][1]["content"],
                            negative_ids=tuple(obj["neg_ids"]),
                            negatives=tuple(obj["negs"]),
                        )
                    )
                elif fmt == "jsonl_pairs":
                    out.append(
                        RerankTrainExample(
                            qid=obj["qid"],
                            doc_id=obj["doc_id"],
                            prompt=obj["prompt"],
                            label=bool(obj["label"]),
                        )
                    )
                else:
                    out.append(
                        RerankTrainExample(
                            qid=obj["qid"],
                            doc_id=obj["doc_id"],
                            prompt=obj["messages"][0]["content"],
                            label=obj["messages"][1]["content"] == "true",
                        )
                    )
            except (KeyError, IndexError, TypeError) as exc:
                raise ParseError(f"malformed record: {exc!r}", path=path, line=number)
    return out
