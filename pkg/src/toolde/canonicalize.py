"""Canonical eight-field normal form for heterogeneous raw tool documents.

Source datasets name the same information differently (description vs
func_description, parameters vs api_arguments, ...). canonicalize() folds
every known raw field name into one of eight canonical fields and preserves
everything unknown in extras, losing nothing.
"""

import json
import random
from dataclasses import dataclass
from typing import Any, Sequence

from toolde.corpus import (
    DOMAINS,
    ExpandedDocument,
    FieldSelection,
    RawToolDocument,
    render_document_text,
)
from toolde.errors import ValidationError
from toolde.prompts import load_template

CANONICAL_FIELDS = (
    "name",
    "description",
    "category",
    "parameters",
    "responses",
    "method",
    "example_usage",
    "limitations",
)

# Raw field name -> canonical field. Canonical names map to themselves so the
# transform is idempotent; matching is exact (raw names are lowercase).
FIELD_MAP: dict[str, str] = {
    "name": "name",
    "name_for_human": "name",
    "description": "description",
    "description_for_human": "description",
    "func_description": "description",
    "functionality": "description",
    "category": "category",
    "category_name": "category",
    "domain": "category",
    "parameters": "parameters",
    "api_arguments": "parameters",
    "optional_parameters": "parameters",
    "required_parameters": "parameters",
    "inputs": "parameters",
    "additional_required_arguments": "parameters",
    "optional_arguments": "parameters",
    "responses": "responses",
    "response": "responses",
    "return_data": "responses",
    "outputs": "responses",
    "result_arguments": "responses",
    "template_response": "responses",
    "output": "responses",
    "method": "method",
    "api_call": "method",
    "url": "method",
    "path": "method",
    "example_usage": "example_usage",
    "example_code": "example_usage",
    "limitation": "limitations",
    "limitations": "limitations",
    "is_transactional": "limitations",
    "performance": "limitations",
    "python_environment_requirements": "limitations",
    "doc_arguments": "limitations",
}


@dataclass(frozen=True)
class CanonicalToolDocument:
    """A document reduced to the eight canonical fields plus untouched extras."""

    id: str
    dataset: str
    domain: str
    canonical: dict[str, Any]
    extras: dict[str, Any]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "dataset": self.dataset,
            "domain": self.domain,
            "canonical": self.canonical,
            "extras": self.extras,
        }


def canonicalize(doc: RawToolDocument) -> CanonicalToolDocument:
    """Fold raw body fields into the eight canonical fields.

    Total: every raw field lands in canonical or extras. When several raw
    fields map to one canonical field, the value becomes an ordered list of
    single-pair objects {raw_name: value} so the original role of each part
    stays visible.
    """
    sources: dict[str, list[tuple[str, Any]]] = {}
    extras: dict[str, Any] = {}
    for raw_name, value in doc.body.items():
        target = FIELD_MAP.get(raw_name)
        if target is None:
            extras[raw_name] = value
        else:
            sources.setdefault(target, []).append((raw_name, value))
    canonical: dict[str, Any] = {}
    for name in CANONICAL_FIELDS:
        if name not in sources:
            continue
        pairs = sources[name]
        if len(pairs) == 1:
            canonical[name] = pairs[0][1]
        else:
            canonical[name] = [{raw_name: value} for raw_name, value in pairs]
    return CanonicalToolDocument(
        id=doc.id, dataset=doc.dataset, domain=doc.domain, canonical=canonical, extras=extras
    )


def _is_empty(value: Any) -> bool:
    # Present zeros and booleans are information; only these count as empty.
    return value is None or value == "" or value == [] or value == {}


@dataclass
class CoverageReport:
    """Fraction of documents per dataset with each canonical field non-empty."""

    datasets: list[str]
    counts: dict[str, int]
    fractions: dict[str, dict[str, float]]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "fields": list(CANONICAL_FIELDS),
            "datasets": [
                {
                    "dataset": dataset,
                    "documents": self.counts[dataset],
                    "coverage": self.fractions[dataset],
                }
                for dataset in self.datasets
            ],
        }

    def to_csv(self) -> str:
        lines = ["dataset,documents," + ",".join(CANONICAL_FIELDS)]
        for dataset in self.datasets:
            row = self.fractions[dataset]
            cells = [dataset, str(self.counts[dataset])]
            cells += [f"{row[name]:.4f}" for name in CANONICAL_FIELDS]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def coverage_matrix(docs: Sequence[CanonicalToolDocument]) -> CoverageReport:
    """Per-dataset fraction of documents whose canonical field is non-empty."""
    if not docs:
        raise ValidationError("coverage matrix needs a non-empty corpus")
    counts: dict[str, int] = {}
    filled: dict[str, dict[str, int]] = {}
    for doc in docs:
        counts[doc.dataset] = counts.get(doc.dataset, 0) + 1
        row = filled.setdefault(doc.dataset, {name: 0 for name in CANONICAL_FIELDS})
        for name in CANONICAL_FIELDS:
            if name in doc.canonical and not _is_empty(doc.canonical[name]):
                row[name] += 1
    datasets = sorted(counts)
    fractions = {
        dataset: {
            name: filled[dataset][name] / counts[dataset] for name in CANONICAL_FIELDS
        }
        for dataset in datasets
    }
    return CoverageReport(datasets=datasets, counts=counts, fractions=fractions)


@dataclass
class AuditReport:
    """Outcome of the sampled completeness audit."""

    per_domain: dict[str, dict[str, Any]]
    overall_rate: float
    total_sampled: int
    total_flagged: int
    total_unparsed: int

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "per_domain": self.per_domain,
            "overall_rate": self.overall_rate,
            "total_sampled": self.total_sampled,
            "total_flagged": self.total_flagged,
            "total_unparsed": self.total_unparsed,
        }


def parse_boolean_verdict(text: str) -> bool | None:
    """Strict true/false parse: trim + casefold; anything else is unparsed."""
    cleaned = text.strip().casefold()
    if cleaned == "true":
        return True
    if cleaned == "false":
        return False
    return None


def audit_completeness(
    docs: Sequence[RawToolDocument | ExpandedDocument],
    judge_backend: Any,
    per_domain_sample: int,
    seed: int,
    selection: FieldSelection | None = None,
    max_tokens: int = 8,
) -> AuditReport:
    """Sample documents per domain and ask the judge whether each is complete.

    A "false" answer flags the document incomplete; unparsable answers land in
    a separate bucket and do not count as flagged. Backend failures propagate
    (the audit aborts rather than reporting partial rates).
    """
    if per_domain_sample < 1:
        raise ValidationError("per_domain_sample must be >= 1")
    if not docs:
        raise ValidationError("completeness audit needs a non-empty corpus")
    template = load_template("audit")
    sel = selection if selection is not None else FieldSelection.original_only()
    rng = random.Random(seed)
    per_domain: dict[str, dict[str, Any]] = {}
    total_sampled = total_flagged = total_unparsed = 0
    for domain in DOMAINS:
        indexed = [(i, doc) for i, doc in enumerate(docs) if doc.domain == domain]
        if not indexed:
            continue
        if len(indexed) > per_domain_sample:
            indexed = sorted(rng.sample(indexed, per_domain_sample))
        flagged_ids: list[str] = []
        unparsed_ids: list[str] = []
        for _, doc in indexed:
            prompt = template + "\n\n" + render_document_text(doc, sel)
            verdict = parse_boolean_verdict(judge_backend.generate(prompt, max_tokens))
            if verdict is False:
                flagged_ids.append(doc.id)
            elif verdict is None:
                unparsed_ids.append(doc.id)
        sampled = len(indexed)
        per_domain[domain] = {
            "sampled": sampled,
            "doc_ids": [doc.id for _, doc in indexed],
            "flagged_ids": flagged_ids,
            "unparsed_ids": unparsed_ids,
            "flagged": len(flagged_ids),
            "unparsed": len(unparsed_ids),
            "rate": len(flagged_ids) / sampled,
        }
        total_sampled += sampled
        total_flagged += len(flagged_ids)
        total_unparsed += len(unparsed_ids)
    return AuditReport(
        per_domain=per_domain,
        overall_rate=total_flagged / total_sampled,
        total_sampled=total_sampled,
        total_flagged=total_flagged,
        total_unparsed=total_unparsed,
    )


def write_canonical_corpus(docs: Sequence[CanonicalToolDocument], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for doc in docs:
            handle.write(json.dumps(doc.to_json_dict(), ensure_ascii=False) + "\n")
