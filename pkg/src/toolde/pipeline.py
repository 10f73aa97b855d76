"""Staged document-expansion pipeline: generate, validate, judge, refine.

Step 1 asks the expander for a tool_profile JSON object. Step 2 applies rule
checks and a model judgement. Documents that fail either are refined exactly
once (step 3) and re-enter the same checks; survivors carry provenance
step3_refined, the rest are counted as final failures and emit no document.
A seeded sample of refined profiles becomes the human-review batch.
"""

import hashlib
import json
import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Sequence

from toolde.corpus import (
    DOMAINS,
    ExpandedDocument,
    FieldSelection,
    RawToolDocument,
    ToolProfile,
    merge_expansion,
    render_document_text,
)
from toolde.errors import BackendUnavailable, ParseError, ValidationError
from toolde.prompts import fill_template, load_template
from toolde.retrieval import tokenize

logger = logging.getLogger(__name__)

VALIDATION_REASONS = (
    "empty_output",
    "invalid_json",
    "missing_function",
    "missing_tags",
    "tags_out_of_range",
    "example_usage_overlong",
    "judge_rejected",
)

WORD_LIMIT = 20

CHECKPOINT_EVERY = 100
CHECKPOINT_VERSION = 1


@dataclass
class PipelineConfig:
    """Backends and knobs for one pipeline run."""

    expander: Any
    judge: Any
    refiner: Any
    max_tokens: int = 1024
    review_sample_size: int = 100
    seed: int = 0
    strict: bool = True

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValidationError("max_tokens must be >= 1")
        if self.review_sample_size < 0:
            raise ValidationError("review_sample_size must be >= 0")


@dataclass(frozen=True)
class ValidationResult:
    """Rule-check outcome; passed holds exactly when reasons is empty."""

    passed: bool
    reasons: tuple[str, ...]

    @classmethod
    def from_reasons(cls, reasons: Sequence[str]) -> "ValidationResult":
        unknown = [r for r in reasons if r not in VALIDATION_REASONS]
        if unknown:
            raise ValidationError(f"unknown validation reasons: {unknown}")
        return cls(passed=not reasons, reasons=tuple(reasons))


def render_expansion_prompt(doc: RawToolDocument) -> str:
    """Fill the expansion template with the original-only document rendering."""
    original = render_document_text(doc, FieldSelection.original_only())
    return fill_template(load_template("expansion"), {"{api_document}": original})


def parse_profile_json(text: str) -> ToolProfile | None:
    """Parse generated output into a profile, tolerating preamble text.

    Everything before the first "{" is dropped, then one JSON object is
    decoded (trailing text after it is ignored). Accepts either
    {"tool_profile": {...}} or a bare profile object. Returns None when no
    object can be decoded.
    """
    start = text.find("{")
    if start < 0:
        return None
    try:
        obj, _ = json.JSONDecoder().raw_decode(text, start)
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict):
        return None
    inner = obj.get("tool_profile", obj)
    if not isinstance(inner, dict):
        return None
    return ToolProfile.from_json_dict(inner)


def expand(doc: RawToolDocument, backend, max_tokens: int = 1024) -> tuple[str, ToolProfile | None]:
    """Step 1: generate a profile for one document.

    Returns the raw model output and the parsed profile (None when parsing
    failed); validity is decided separately by rule_check.
    """
    raw_text = backend.generate(render_expansion_prompt(doc), max_tokens)
    return raw_text, parse_profile_json(raw_text)


def rule_check(
    profile: ToolProfile | None, raw_text: str, strict: bool = True
) -> ValidationResult:
    """Deterministic validity rules for one generated profile.

    Word-count guidance on function / when_to_use is surfaced as a warning,
    never a failure.
    """
    if not raw_text.strip():
        return ValidationResult.from_reasons(["empty_output"])
    if profile is None:
        return ValidationResult.from_reasons(["invalid_json"])
    for name in ("function", "when_to_use"):
        value = getattr(profile, name)
        if value and len(value.split()) > WORD_LIMIT:
            logger.warning("profile %s exceeds %d words (%d)", name, WORD_LIMIT, len(value.split()))
    return ValidationResult.from_reasons(profile.problems(strict=strict))


def render_judgement_prompt(doc: RawToolDocument, profile: ToolProfile) -> str:
    """The judgement template followed by its two inputs, in order."""
    original = render_document_text(doc, FieldSelection.original_only())
    profile_json = json.dumps(profile.to_json_dict(), ensure_ascii=False)
    return (
        load_template("judgement")
        + "\n\n(1) Original API documentation:\n"
        + original
        + "\n\n(2) tool_profile:\n"
        + profile_json
    )


def parse_judgement(text: str) -> bool | None:
    """Strict true/false after trim+casefold; anything else is unparsed."""
    cleaned = text.strip().casefold()
    if cleaned == "true":
        return True
    if cleaned == "false":
        return False
    return None


def judge(doc: RawToolDocument, profile: ToolProfile, backend, max_tokens: int = 8) -> bool:
    """Step 2 judgement: True only for an exact (trimmed, casefolded) "true".

    Unparsable verdicts conservatively count as rejection.
    """
    verdict = parse_judgement(backend.generate(render_judgement_prompt(doc, profile), max_tokens))
    return verdict is True


def refine(doc: RawToolDocument, backend, max_tokens: int = 1024) -> tuple[str, ToolProfile | None]:
    """Step 3: regenerate with the refiner backend; same prompt and parsing."""
    raw_text = backend.generate(render_expansion_prompt(doc), max_tokens)
    return raw_text, parse_profile_json(raw_text)


@dataclass
class StageLatency:
    count: int = 0
    total: float = 0.0
    min: float = float("inf")
    max: float = 0.0

    def add(self, seconds: float) -> None:
        self.count += 1
        self.total += seconds
        self.min = min(self.min, seconds)
        self.max = max(self.max, seconds)

    def to_json_dict(self) -> dict[str, float]:
        mean = self.total / self.count if self.count else 0.0
        return {
            "count": self.count,
            "mean": mean,
            "min": self.min if self.count else 0.0,
            "max": self.max,
        }


@dataclass
class PipelineReport:
    """Counts and diagnostics for one pipeline run.

    total always equals passed_step2 + refined_step3 + failed_final.
    """

    total: int = 0
    passed_step2: int = 0
    refined_step3: int = 0
    failed_final: int = 0
    failure_reasons: Counter = field(default_factory=Counter)
    unparsed_judgements: int = 0
    latency: dict[str, StageLatency] = field(default_factory=dict)

    def to_json_dict(self, include_latency: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "total": self.total,
            "passed_step2": self.passed_step2,
            "refined_step3": self.refined_step3,
            "failed_final": self.failed_final,
            "failure_reasons": dict(sorted(self.failure_reasons.items())),
            "unparsed_judgements": self.unparsed_judgements,
        }
        if include_latency:
            out["latency"] = {
                stage: stats.to_json_dict() for stage, stats in sorted(self.latency.items())
            }
        return out


@dataclass
class ReviewBatch:
    """Refined profiles sampled for human review."""

    batch_id: str
    items: list[dict[str, Any]]

    def to_json_dict(self) -> dict[str, Any]:
        return {"batch_id": self.batch_id, "items": self.items}

    @classmethod
    def from_json_dict(cls, obj: dict[str, Any]) -> "ReviewBatch":
        if not isinstance(obj.get("batch_id"), str) or not obj["batch_id"]:
            raise ValidationError("review batch needs a non-empty batch_id")
        items = obj.get("items")
        if not isinstance(items, list):
            raise ValidationError("review batch needs an items list")
        seen: set[str] = set()
        for item in items:
            if not isinstance(item, dict) or not isinstance(item.get("item_id"), str):
                raise ValidationError("every review item needs a string item_id")
            if item["item_id"] in seen:
                raise ValidationError(f"duplicate review item id {item['item_id']!r}")
            seen.add(item["item_id"])
        return cls(batch_id=obj["batch_id"], items=items)


def _review_item(doc: ExpandedDocument) -> dict[str, Any]:
    return {
        "item_id": doc.id,
        "dataset": doc.dataset,
        "domain": doc.domain,
        "provenance": doc.provenance,
        "original": dict(doc.original.body),
        "profile": doc.profile.to_json_dict(),
    }


def build_review_batch(
    refined: Sequence[ExpandedDocument], sample_size: int, seed: int
) -> ReviewBatch:
    """Seeded sample of refined documents, kept in corpus order."""
    chosen = list(refined)
    if len(chosen) > sample_size:
        order = {doc.id: i for i, doc in enumerate(refined)}
        chosen = sorted(random.Random(seed).sample(chosen, sample_size), key=lambda d: order[d.id])
    digest = hashlib.sha256(",".join(doc.id for doc in chosen).encode("utf-8")).hexdigest()
    return ReviewBatch(batch_id=f"rb-{digest[:12]}", items=[_review_item(doc) for doc in chosen])


# ── Orchestration ──


@dataclass
class _DocOutcome:
    status: str  # "passed" | "refined" | "failed"
    profile_json: dict[str, Any] | None
    reasons: tuple[str, ...]
    unparsed_judgements: int

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "profile": self.profile_json,
            "reasons": list(self.reasons),
            "unparsed_judgements": self.unparsed_judgements,
        }

    @classmethod
    def from_json_dict(cls, obj: dict[str, Any]) -> "_DocOutcome":
        return cls(
            status=obj["status"],
            profile_json=obj["profile"],
            reasons=tuple(obj["reasons"]),
            unparsed_judgements=int(obj.get("unparsed_judgements", 0)),
        )


def _process_document(
    doc: RawToolDocument, config: PipelineConfig
) -> tuple[_DocOutcome, dict[str, list[float]]]:
    """Run one document through the stages, collecting per-stage latencies
    locally so parallel workers never share mutable state."""
    unparsed = 0
    latencies: dict[str, list[float]] = {}

    def timed(stage: str, fn):
        start = time.perf_counter()
        result = fn()
        latencies.setdefault(stage, []).append(time.perf_counter() - start)
        return result

    def check_and_judge(raw_text: str, profile: ToolProfile | None, stage: str):
        nonlocal unparsed
        result = rule_check(profile, raw_text, strict=config.strict)
        if not result.passed:
            return result
        prompt = render_judgement_prompt(doc, profile)
        response = timed(stage, lambda: config.judge.generate(prompt, config.max_tokens))
        verdict = parse_judgement(response)
        if verdict is None:
            unparsed += 1
        if verdict is not True:
            return ValidationResult.from_reasons(["judge_rejected"])
        return result

    raw_text, profile = timed("expand", lambda: expand(doc, config.expander, config.max_tokens))
    first = check_and_judge(raw_text, profile, "judge")
    if first.passed:
        return _DocOutcome("passed", profile.to_json_dict(), (), unparsed), latencies
    raw_text2, profile2 = timed("refine", lambda: refine(doc, config.refiner, config.max_tokens))
    second = check_and_judge(raw_text2, profile2, "judge_refined")
    if second.passed:
        return _DocOutcome("refined", profile2.to_json_dict(), (), unparsed), latencies
    return _DocOutcome("failed", None, second.reasons, unparsed), latencies


def _load_checkpoint(path: str, corpus_ids: list[str]) -> dict[str, _DocOutcome]:
    if not os.path.exists(path):
        return {}
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    if data.get("version") != CHECKPOINT_VERSION:
        raise ParseError(
            f"checkpoint version {data.get('version')!r} not supported", path=path
        )
    known = set(corpus_ids)
    outcomes: dict[str, _DocOutcome] = {}
    for doc_id, obj in data.get("outcomes", {}).items():
        if doc_id not in known:
            raise ParseError(
                f"checkpoint doc id {doc_id!r} not in current corpus", path=path
            )
        outcomes[doc_id] = _DocOutcome.from_json_dict(obj)
    if outcomes:
        logger.info("resuming from checkpoint %s (%d documents done)", path, len(outcomes))
    return outcomes


def _save_checkpoint(path: str, outcomes: dict[str, _DocOutcome]) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "outcomes": {doc_id: outcome.to_json_dict() for doc_id, outcome in outcomes.items()},
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=False)
    os.replace(tmp, path)


def run_pipeline(
    corpus: Sequence[RawToolDocument],
    config: PipelineConfig,
    checkpoint_path: str | None = None,
    jobs: int = 1,
) -> tuple[list[ExpandedDocument], PipelineReport, ReviewBatch]:
    """Run the full pipeline over a corpus, in corpus order.

    Conservation: every input is counted exactly once as passed, refined, or
    failed. With a checkpoint path, progress is saved every 100 documents and
    on backend exhaustion, and completed documents are skipped on resume.
    """
    if not corpus:
        raise ValidationError("cannot run the pipeline on an empty corpus")
    if jobs < 1:
        raise ValidationError("jobs must be >= 1")
    ids = [doc.id for doc in corpus]
    if len(set(ids)) != len(ids):
        raise ValidationError("corpus has duplicate document ids")
    outcomes: dict[str, _DocOutcome] = (
        _load_checkpoint(checkpoint_path, ids) if checkpoint_path else {}
    )
    report = PipelineReport()

    def merge_latencies(latencies: dict[str, list[float]]) -> None:
        for stage, samples in latencies.items():
            stats = report.latency.setdefault(stage, StageLatency())
            for seconds in samples:
                stats.add(seconds)

    pending = [doc for doc in corpus if doc.id not in outcomes]
    processed_since_save = 0
    try:
        if jobs > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as executor:
                # executor.map preserves corpus order, so results (and any
                # raised backend failure) arrive deterministically.
                for doc, (outcome, latencies) in zip(
                    pending, executor.map(lambda d: _process_document(d, config), pending)
                ):
                    outcomes[doc.id] = outcome
                    merge_latencies(latencies)
                    processed_since_save += 1
                    if checkpoint_path and processed_since_save % CHECKPOINT_EVERY == 0:
                        _save_checkpoint(checkpoint_path, outcomes)
        else:
            for doc in pending:
                outcome, latencies = _process_document(doc, config)
                outcomes[doc.id] = outcome
                merge_latencies(latencies)
                processed_since_save += 1
                if checkpoint_path and processed_since_save % CHECKPOINT_EVERY == 0:
                    _save_checkpoint(checkpoint_path, outcomes)
    except BackendUnavailable:
        if checkpoint_path:
            _save_checkpoint(checkpoint_path, outcomes)
            logger.error("backend unavailable; checkpoint saved to %s", checkpoint_path)
        raise
    if checkpoint_path:
        _save_checkpoint(checkpoint_path, outcomes)
    documents: list[ExpandedDocument] = []
    refined_docs: list[ExpandedDocument] = []
    for doc in corpus:
        outcome = outcomes[doc.id]
        report.total += 1
        report.unparsed_judgements += outcome.unparsed_judgements
        if outcome.status == "failed":
            report.failed_final += 1
            report.failure_reasons.update(outcome.reasons)
            continue
        provenance = "step1_pass" if outcome.status == "passed" else "step3_refined"
        expanded = merge_expansion(
            doc, ToolProfile.from_json_dict(outcome.profile_json), provenance
        )
        documents.append(expanded)
        if outcome.status == "passed":
            report.passed_step2 += 1
        else:
            report.refined_step3 += 1
            refined_docs.append(expanded)
    review = build_review_batch(refined_docs, config.review_sample_size, config.seed)
    return documents, report, review


# ── Token statistics ──

TOKENIZERS = {
    "whitespace": str.split,
    "unicode_alnum_lower": tokenize,
}


@dataclass
class TokenStats:
    """Mean token counts per domain; the overall row is the macro mean of the
    per-domain means. expanded = original + profile by definition."""

    tokenizer: str
    per_domain: dict[str, dict[str, float]]
    overall: dict[str, float]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "tokenizer": self.tokenizer,
            "per_domain": self.per_domain,
            "overall": self.overall,
        }


def token_stats(
    docs: Sequence[ExpandedDocument],
    tokenizer: str = "whitespace",
    selection: FieldSelection | None = None,
) -> TokenStats:
    """Average original / profile / expanded token lengths per domain."""
    if not docs:
        raise ValidationError("token stats need a non-empty corpus")
    try:
        tokenize_fn = TOKENIZERS[tokenizer]
    except KeyError:
        raise ValidationError(f"unknown tokenizer {tokenizer!r} (have {sorted(TOKENIZERS)})")
    sel = selection if selection is not None else FieldSelection.full_profile()
    sums: dict[str, dict[str, float]] = {}
    counts: dict[str, int] = {}
    for doc in docs:
        original_len = len(tokenize_fn(render_document_text(doc, FieldSelection.original_only())))
        profile_payload = doc.profile.to_json_dict(sel)
        profile_len = (
            len(tokenize_fn(json.dumps(profile_payload, ensure_ascii=False)))
            if profile_payload
            else 0
        )
        bucket = sums.setdefault(doc.domain, {"original": 0.0, "profile": 0.0, "expanded": 0.0})
        bucket["original"] += original_len
        bucket["profile"] += profile_len
        bucket["expanded"] += original_len + profile_len
        counts[doc.domain] = counts.get(doc.domain, 0) + 1
    per_domain: dict[str, dict[str, float]] = {}
    for domain in DOMAINS:
        if domain not in sums:
            continue
        n = counts[domain]
        per_domain[domain] = {key: value / n for key, value in sums[domain].items()}
        per_domain[domain]["documents"] = float(n)
    overall = {
        key: sum(per_domain[d][key] for d in per_domain) / len(per_domain)
        for key in ("original", "profile", "expanded")
    }
    overall["documents"] = float(sum(counts.values()))
    return TokenStats(tokenizer=tokenizer, per_domain=per_domain, overall=overall)
