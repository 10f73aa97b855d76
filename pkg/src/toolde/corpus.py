"""Document, query, judgment, and run types plus their on-disk formats.

Raw tool documents keep their source fields in original insertion order.
Expansion adds a single "tool_profile" object; rendering and serialization
never reorder or rewrite the original fields, so the original part of an
expanded document stays byte-identical to the unexpanded rendering.
"""

import json
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from toolde.errors import ParseError, ValidationError

DOMAINS = ("web", "code", "customized")
PROFILE_FIELDS = ("function", "tags", "when_to_use", "example_usage", "limitation")
PROFILE_KEY = "tool_profile"
PROVENANCES = ("step1_pass", "step3_refined")

MAX_EXAMPLE_USAGE = 2


def _dumps(obj: Any) -> str:
    """Canonical single-line JSON used everywhere a document is rendered."""
    return json.dumps(obj, ensure_ascii=False)


def normalize_tags(values: Iterable[str]) -> tuple[str, ...]:
    """Lowercase and trim tags, drop empties, dedupe preserving first occurrence."""
    seen: list[str] = []
    for value in values:
        tag = value.strip().lower()
        if tag and tag not in seen:
            seen.append(tag)
    return tuple(seen)


@dataclass(frozen=True)
class RawToolDocument:
    """One source tool document: envelope metadata plus the ordered raw body."""

    id: str
    dataset: str
    domain: str
    body: dict[str, Any]

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("document id must be non-empty")
        if not self.dataset:
            raise ValidationError(f"document {self.id!r}: dataset must be non-empty")
        if self.domain not in DOMAINS:
            raise ValidationError(
                f"document {self.id!r}: domain {self.domain!r} not one of {DOMAINS}"
            )
        if not isinstance(self.body, dict):
            raise ValidationError(f"document {self.id!r}: body must be a JSON object")


@dataclass(frozen=True)
class ToolProfile:
    """Generated profile fields. Tags are normalized at construction."""

    function: str = ""
    tags: tuple[str, ...] = ()
    when_to_use: str | None = None
    example_usage: tuple[dict[str, str], ...] | None = None
    limitation: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tags", normalize_tags(self.tags))
        if self.example_usage is not None:
            for entry in self.example_usage:
                if not isinstance(entry, Mapping):
                    raise ValidationError(
                        f"example_usage entries must be objects, got {type(entry).__name__}"
                    )
            object.__setattr__(
                self, "example_usage", tuple(dict(e) for e in self.example_usage)
            )

    @classmethod
    def from_json_dict(cls, obj: Mapping[str, Any]) -> "ToolProfile":
        """Build leniently from parsed JSON; validity is checked by problems()."""
        function = obj.get("function")
        tags_raw = obj.get("tags")
        tags: tuple[str, ...] = ()
        if isinstance(tags_raw, (list, tuple)):
            tags = tuple(t for t in tags_raw if isinstance(t, str))
        when = obj.get("when_to_use")
        limitation = obj.get("limitation")
        usage = obj.get("example_usage")
        entries: tuple[dict[str, str], ...] | None = None
        if isinstance(usage, (list, tuple)):
            kept = []
            for entry in usage:
                if not isinstance(entry, dict):
                    continue
                cleaned = {
                    key: entry[key]
                    for key in ("query", "api_call")
                    if isinstance(entry.get(key), str)
                }
                if cleaned:
                    kept.append(cleaned)
            entries = tuple(kept) if kept else None
        return cls(
            function=function if isinstance(function, str) else "",
            tags=tags,
            when_to_use=when if isinstance(when, str) and when.strip() else None,
            example_usage=entries,
            limitation=limitation
            if isinstance(limitation, str) and limitation.strip()
            else None,
        )

    def problems(self, strict: bool = True) -> list[str]:
        """Field-level validation reasons; empty list means the profile is valid.

        Strict mode additionally bounds the tag count at 5 (after
        normalization); a zero tag count is always missing_tags.
        """
        reasons: list[str] = []
        if not self.function.strip():
            reasons.append("missing_function")
        if not self.tags:
            reasons.append("missing_tags")
        elif strict and not 1 <= len(self.tags) <= 5:
            reasons.append("tags_out_of_range")
        if self.example_usage is not None and len(self.example_usage) > MAX_EXAMPLE_USAGE:
            reasons.append("example_usage_overlong")
        return reasons

    def to_json_dict(self, selection: "FieldSelection | None" = None) -> dict[str, Any]:
        """Serialize selected fields in the fixed profile field order.

        Optional fields are emitted only when present; an empty result means
        the selection matched nothing.
        """
        include = selection.fields if selection is not None else frozenset(PROFILE_FIELDS)
        out: dict[str, Any] = {}
        if "function" in include and self.function:
            out["function"] = self.function
        if "tags" in include and self.tags:
            out["tags"] = list(self.tags)
        if "when_to_use" in include and self.when_to_use is not None:
            out["when_to_use"] = self.when_to_use
        if "example_usage" in include and self.example_usage:
            out["example_usage"] = [dict(e) for e in self.example_usage]
        if "limitation" in include and self.limitation is not None:
            out["limitation"] = self.limitation
        return out

    def has_field(self, name: str) -> bool:
        if name not in PROFILE_FIELDS:
            raise ValidationError(f"unknown profile field {name!r}")
        value = getattr(self, name)
        return bool(value) if name in ("function", "tags", "example_usage") else value is not None


@dataclass(frozen=True)
class FieldSelection:
    """Subset of profile fields to include when rendering a document."""

    fields: frozenset[str]

    def __post_init__(self) -> None:
        unknown = sorted(self.fields - set(PROFILE_FIELDS))
        if unknown:
            raise ValidationError(f"unknown profile fields in selection: {unknown}")

    @classmethod
    def original_only(cls) -> "FieldSelection":
        return cls(frozenset())

    @classmethod
    def full_profile(cls) -> "FieldSelection":
        return cls(frozenset(PROFILE_FIELDS))

    @classmethod
    def default_retrieval(cls) -> "FieldSelection":
        """Default rendering for retrieval: everything except example_usage."""
        return cls(frozenset(PROFILE_FIELDS) - {"example_usage"})

    @classmethod
    def add_one(cls, name: str) -> "FieldSelection":
        """Original document plus exactly one profile field."""
        return cls(frozenset({name}))

    @classmethod
    def one_out(cls, name: str) -> "FieldSelection":
        """Full profile minus exactly one field."""
        if name not in PROFILE_FIELDS:
            raise ValidationError(f"unknown profile field {name!r}")
        return cls(frozenset(PROFILE_FIELDS) - {name})

    @classmethod
    def parse(cls, spec: str) -> "FieldSelection":
        """Parse a CLI selection spec.

        Accepts: default | original | full | add_one:<field> | one_out:<field>
        or a comma-separated list of profile field names.
        """
        text = spec.strip()
        if text in ("default", "default_retrieval"):
            return cls.default_retrieval()
        if text in ("original", "original_only", "none"):
            return cls.original_only()
        if text in ("full", "full_profile", "all"):
            return cls.full_profile()
        if text.startswith("add_one:"):
            return cls.add_one(text.split(":", 1)[1])
        if text.startswith("one_out:"):
            return cls.one_out(text.split(":", 1)[1])
        names = [part.strip() for part in text.split(",") if part.strip()]
        if not names:
            raise ValidationError(f"empty field selection spec {spec!r}")
        return cls(frozenset(names))


@dataclass(frozen=True)
class ExpandedDocument:
    """A raw document with a validated tool profile attached."""

    original: RawToolDocument
    profile: ToolProfile
    provenance: str = "step1_pass"

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValidationError(
                f"document {self.original.id!r}: provenance {self.provenance!r}"
                f" not one of {PROVENANCES}"
            )

    @property
    def id(self) -> str:
        return self.original.id

    @property
    def dataset(self) -> str:
        return self.original.dataset

    @property
    def domain(self) -> str:
        return self.original.domain

    def to_json_dict(self) -> dict[str, Any]:
        """Original keys in original order plus exactly one tool_profile key."""
        merged = dict(self.original.body)
        merged[PROFILE_KEY] = self.profile.to_json_dict()
        return merged


def merge_expansion(
    original: RawToolDocument, profile: ToolProfile, provenance: str = "step1_pass"
) -> ExpandedDocument:
    """Attach a profile to a document, rejecting profiles that fail validation."""
    reasons = profile.problems(strict=False)
    if reasons:
        raise ValidationError(
            f"document {original.id!r}: invalid profile: {', '.join(reasons)}"
        )
    if PROFILE_KEY in original.body:
        raise ValidationError(
            f"document {original.id!r}: original body already has a"
            f" {PROFILE_KEY!r} field"
        )
    return ExpandedDocument(original=original, profile=profile, provenance=provenance)


def render_document_text(
    doc: "RawToolDocument | ExpandedDocument",
    selection: FieldSelection | None = None,
) -> str:
    """Deterministic single-line JSON rendering of a document.

    Raw documents render as their body alone. Expanded documents append a
    tool_profile object filtered by the selection (default drops
    example_usage); a selection matching no present field falls back to the
    original-only rendering.
    """
    if isinstance(doc, RawToolDocument):
        return _dumps(doc.body)
    sel = selection if selection is not None else FieldSelection.default_retrieval()
    payload = doc.profile.to_json_dict(sel)
    if not payload:
        return _dumps(doc.original.body)
    merged = dict(doc.original.body)
    merged[PROFILE_KEY] = payload
    return _dumps(merged)


@dataclass(frozen=True)
class Query:
    """One retrieval query; instruction is an optional task description."""

    qid: str
    domain: str
    text: str
    instruction: str | None = None

    def __post_init__(self) -> None:
        if not self.qid:
            raise ValidationError("query qid must be non-empty")
        if self.domain not in DOMAINS:
            raise ValidationError(
                f"query {self.qid!r}: domain {self.domain!r} not one of {DOMAINS}"
            )
        if not self.text:
            raise ValidationError(f"query {self.qid!r}: text must be non-empty")


@dataclass
class RankedRun:
    """Per-query ranked (doc id, score) lists under one run tag."""

    tag: str
    rankings: dict[str, list[tuple[str, float]]]

    def __post_init__(self) -> None:
        if not self.tag:
            raise ValidationError("run tag must be non-empty")
        for qid, ranking in self.rankings.items():
            seen: set[str] = set()
            previous: float | None = None
            for doc_id, score in ranking:
                if doc_id in seen:
                    raise ValidationError(
                        f"run {self.tag!r} qid {qid!r}: duplicate doc id {doc_id!r}"
                    )
                seen.add(doc_id)
                if previous is not None and score > previous:
                    raise ValidationError(
                        f"run {self.tag!r} qid {qid!r}: scores increase at {doc_id!r}"
                    )
                previous = score


# ── JSONL corpus files ──


def _iter_jsonl(path: str) -> Iterable[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=number)
            if not isinstance(obj, dict):
                raise ParseError("line is not a JSON object", path=path, line=number)
            yield number, obj


def load_corpus(path: str) -> list[RawToolDocument]:
    """Load a raw corpus JSONL file ({"id","dataset","domain","doc"} per line)."""
    docs: list[RawToolDocument] = []
    seen: set[str] = set()
    for number, obj in _iter_jsonl(path):
        missing = [key for key in ("id", "dataset", "domain", "doc") if key not in obj]
        if missing:
            raise ParseError(f"missing keys {missing}", path=path, line=number)
        if not isinstance(obj["doc"], dict):
            raise ParseError("doc must be a JSON object", path=path, line=number)
        try:
            doc = RawToolDocument(
                id=str(obj["id"]),
                dataset=str(obj["dataset"]),
                domain=str(obj["domain"]),
                body=obj["doc"],
            )
        except ValidationError as exc:
            raise ParseError(str(exc), path=path, line=number)
        if doc.id in seen:
            raise ParseError(f"duplicate document id {doc.id!r}", path=path, line=number)
        seen.add(doc.id)
        docs.append(doc)
    return docs


def expanded_to_record(doc: ExpandedDocument) -> dict[str, Any]:
    return {
        "id": doc.id,
        "dataset": doc.dataset,
        "domain": doc.domain,
        "provenance": doc.provenance,
        "doc": doc.to_json_dict(),
    }


def write_expanded_corpus(docs: Sequence[ExpandedDocument], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for doc in docs:
            handle.write(_dumps(expanded_to_record(doc)) + "\n")


def load_expanded_corpus(path: str) -> list[ExpandedDocument]:
    """Load an expanded corpus JSONL file (doc carries a tool_profile key)."""
    docs: list[ExpandedDocument] = []
    seen: set[str] = set()
    for number, obj in _iter_jsonl(path):
        missing = [key for key in ("id", "dataset", "domain", "doc") if key not in obj]
        if missing:
            raise ParseError(f"missing keys {missing}", path=path, line=number)
        body = obj["doc"]
        if not isinstance(body, dict) or PROFILE_KEY not in body:
            raise ParseError(
                f"doc must be a JSON object with a {PROFILE_KEY!r} field",
                path=path,
                line=number,
            )
        profile_obj = body[PROFILE_KEY]
        if not isinstance(profile_obj, dict):
            raise ParseError(f"{PROFILE_KEY!r} must be a JSON object", path=path, line=number)
        original_body = {key: value for key, value in body.items() if key != PROFILE_KEY}
        try:
            original = RawToolDocument(
                id=str(obj["id"]),
                dataset=str(obj["dataset"]),
                domain=str(obj["domain"]),
                body=original_body,
            )
            doc = merge_expansion(
                original,
                ToolProfile.from_json_dict(profile_obj),
                provenance=str(obj.get("provenance", "step1_pass")),
            )
        except ValidationError as exc:
            raise ParseError(str(exc), path=path, line=number)
        if doc.id in seen:
            raise ParseError(f"duplicate document id {doc.id!r}", path=path, line=number)
        seen.add(doc.id)
        docs.append(doc)
    return docs


def load_any_corpus(path: str) -> "list[RawToolDocument] | list[ExpandedDocument]":
    """Load a corpus file as expanded if its docs carry profiles, raw otherwise."""
    for _, obj in _iter_jsonl(path):
        body = obj.get("doc")
        if isinstance(body, dict) and PROFILE_KEY in body:
            return load_expanded_corpus(path)
        break
    return load_corpus(path)


# ── Queries, qrels, and TREC run files ──


def load_queries(path: str) -> list[Query]:
    """Load queries JSONL ({"qid","domain","query","instruction"?} per line)."""
    queries: list[Query] = []
    seen: set[str] = set()
    for number, obj in _iter_jsonl(path):
        missing = [key for key in ("qid", "domain", "query") if key not in obj]
        if missing:
            raise ParseError(f"missing keys {missing}", path=path, line=number)
        instruction = obj.get("instruction")
        try:
            query = Query(
                qid=str(obj["qid"]),
                domain=str(obj["domain"]),
                text=str(obj["query"]),
                instruction=str(instruction) if instruction is not None else None,
            )
        except ValidationError as exc:
            raise ParseError(str(exc), path=path, line=number)
        if query.qid in seen:
            raise ParseError(f"duplicate qid {query.qid!r}", path=path, line=number)
        seen.add(query.qid)
        queries.append(query)
    return queries


def load_qrels(path: str) -> dict[str, set[str]]:
    """Load TREC qrels ("qid 0 docid rel"); rel > 0 marks a relevant doc.

    Qids whose lines are all non-positive are dropped so every returned set
    is non-empty.
    """
    qrels: dict[str, set[str]] = {}
    with open(path, encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(
                    f"expected 4 whitespace-separated columns, got {len(parts)}",
                    path=path,
                    line=number,
                )
            qid, _, doc_id, rel_text = parts
            try:
                rel = int(rel_text)
            except ValueError:
                raise ParseError(
                    f"relevance {rel_text!r} is not an integer", path=path, line=number
                )
            if rel > 0:
                qrels.setdefault(qid, set()).add(doc_id)
    return qrels


def write_run(run: RankedRun, path: str) -> None:
    """Write a run in TREC format ("qid Q0 docid rank score tag")."""
    with open(path, "w", encoding="utf-8") as handle:
        for qid, ranking in run.rankings.items():
            for rank, (doc_id, score) in enumerate(ranking, start=1):
                handle.write(f"{qid} Q0 {doc_id} {rank} {score!r} {run.tag}\n")


def load_run(path: str) -> RankedRun:
    """Load a TREC run file, preserving per-query order."""
    rankings: dict[str, list[tuple[str, float]]] = {}
    tag: str | None = None
    with open(path, encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ParseError(
                    f"expected 6 whitespace-separated columns, got {len(parts)}",
                    path=path,
                    line=number,
                )
            qid, _, doc_id, _, score_text, line_tag = parts
            if tag is None:
                tag = line_tag
            elif line_tag != tag:
                raise ParseError(
                    f"inconsistent run tags {tag!r} and {line_tag!r}",
                    path=path,
                    line=number,
                )
            try:
                score = float(score_text)
            except ValueError:
                raise ParseError(
                    f"score {score_text!r} is not a number", path=path, line=number
                )
            rankings.setdefault(qid, []).append((doc_id, score))
    if tag is None:
        raise ParseError("run file is empty", path=path)
    try:
        return RankedRun(tag=tag, rankings=rankings)
    except ValidationError as exc:
        raise ParseError(str(exc), path=path)
