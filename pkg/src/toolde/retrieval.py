"""First-stage retrieval: BM25 inverted index and dense cosine index.

BM25 uses the Lucene-style variant: idf = ln(1 + (N - df + 0.5) / (df + 0.5))
and tf' = tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avglen)). Dense
scoring is cosine similarity via dot products over unit-normalized rows.
Both indexes persist to single binary files with versioned headers.
"""

import json
import math
import re
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from toolde.corpus import Query
from toolde.errors import ParseError, ValidationError

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

SPARSE_MAGIC = b"TDESP001"
DENSE_MAGIC = b"TDEDN001"

DEFAULT_POOL_SIZE = 100


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters, dropping empties."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class SparseIndexParams:
    k1: float = 1.2
    b: float = 0.75
    tokenizer: str = "unicode_alnum_lower"

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValidationError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValidationError(f"b must be in [0, 1], got {self.b}")
        if self.tokenizer != "unicode_alnum_lower":
            raise ValidationError(f"unknown tokenizer {self.tokenizer!r}")


@dataclass
class SparseIndex:
    """Inverted index: term -> [(doc ordinal, term frequency)]."""

    params: SparseIndexParams
    doc_ids: list[str]
    doc_lengths: list[int]
    avg_doc_length: float
    postings: dict[str, list[tuple[int, int]]]
    _ordinals: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._ordinals:
            self._ordinals = {doc_id: i for i, doc_id in enumerate(self.doc_ids)}

    @property
    def size(self) -> int:
        return len(self.doc_ids)

    def ordinal(self, doc_id: str) -> int:
        try:
            return self._ordinals[doc_id]
        except KeyError:
            raise ValidationError(f"doc id {doc_id!r} not in index")


def build_sparse_index(
    docs: Sequence[tuple[str, str]], params: SparseIndexParams | None = None
) -> SparseIndex:
    """Index (doc_id, text) pairs. Duplicate ids and empty corpora are errors."""
    if not docs:
        raise ValidationError("cannot index an empty corpus")
    params = params or SparseIndexParams()
    doc_ids: list[str] = []
    doc_lengths: list[int] = []
    postings: dict[str, list[tuple[int, int]]] = {}
    seen: set[str] = set()
    for ordinal, (doc_id, text) in enumerate(docs):
        if doc_id in seen:
            raise ValidationError(f"duplicate doc id {doc_id!r}")
        seen.add(doc_id)
        doc_ids.append(doc_id)
        tokens = tokenize(text)
        doc_lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((ordinal, tf))
    avg = sum(doc_lengths) / len(doc_lengths)
    return SparseIndex(
        params=params,
        doc_ids=doc_ids,
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        postings=postings,
    )


def _idf(index: SparseIndex, df: int) -> float:
    return math.log(1.0 + (index.size - df + 0.5) / (df + 0.5))


def _tf_part(index: SparseIndex, tf: int, doc_length: int) -> float:
    k1, b = index.params.k1, index.params.b
    norm = 1.0 - b + b * doc_length / index.avg_doc_length
    return tf * (k1 + 1.0) / (tf + k1 * norm)


def bm25_score(index: SparseIndex, query_terms: Sequence[str], doc_id: str) -> float:
    """Score one document; duplicate query terms contribute per occurrence."""
    ordinal = index.ordinal(doc_id)
    score = 0.0
    for term in query_terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        tf = next((f for o, f in plist if o == ordinal), 0)
        if tf == 0:
            continue
        score += _idf(index, len(plist)) * _tf_part(index, tf, index.doc_lengths[ordinal])
    return score


def query_text(query: "Query | str", instruction_mode: str) -> str:
    if instruction_mode not in ("query_only", "concat"):
        raise ValidationError(f"unknown instruction_mode {instruction_mode!r}")
    if isinstance(query, str):
        return query
    if instruction_mode == "concat" and query.instruction:
        return query.instruction + "\n" + query.text
    return query.text


def search_sparse(
    index: SparseIndex,
    query: "Query | str",
    k: int,
    instruction_mode: str = "query_only",
) -> list[tuple[str, float]]:
    """Top-k by BM25, descending; ties broken by ascending doc id; only
    strictly positive scores are returned."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    tokens = tokenize(query_text(query, instruction_mode))
    # Accumulate per document in query-token order so sums are bitwise stable
    # against a document-at-a-time reference scorer.
    scores: dict[int, float] = {}
    for term in tokens:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = _idf(index, len(plist))
        for ordinal, tf in plist:
            part = idf * _tf_part(index, tf, index.doc_lengths[ordinal])
            scores[ordinal] = scores.get(ordinal, 0.0) + part
    hits = [
        (index.doc_ids[ordinal], score) for ordinal, score in scores.items() if score > 0.0
    ]
    hits.sort(key=lambda pair: (-pair[1], pair[0]))
    return hits[:k]


@dataclass
class DenseIndex:
    """Unit-normalized embedding rows (float32) keyed by doc id."""

    doc_ids: list[str]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.doc_ids):
            raise ValidationError("dense index matrix shape does not match doc ids")
        norms = np.linalg.norm(self.matrix.astype(np.float64), axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValidationError("dense index rows must be unit-normalized (within 1e-6)")

    @property
    def dimension(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def size(self) -> int:
        return len(self.doc_ids)


def _normalize(vector: Sequence[float], owner: str) -> np.ndarray:
    array = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(array))
    if norm == 0.0:
        raise ValidationError(f"zero embedding vector for {owner}")
    return array / norm


def build_dense_index(
    docs: Sequence[tuple[str, str]], backend, batch_size: int = 32
) -> DenseIndex:
    """Embed (doc_id, text) pairs in batches and stack unit-normalized rows.

    The result is invariant to batch size because each text embeds
    independently. All-zero embeddings are rejected naming the doc id.
    """
    if not docs:
        raise ValidationError("cannot index an empty corpus")
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    seen: set[str] = set()
    for doc_id, _ in docs:
        if doc_id in seen:
            raise ValidationError(f"duplicate doc id {doc_id!r}")
        seen.add(doc_id)
    doc_ids = [doc_id for doc_id, _ in docs]
    rows: list[np.ndarray] = []
    dimension: int | None = None
    for start in range(0, len(docs), batch_size):
        batch = docs[start : start + batch_size]
        vectors = backend.embed([text for _, text in batch])
        for (doc_id, _), vector in zip(batch, vectors):
            if dimension is None:
                dimension = len(vector)
            elif len(vector) != dimension:
                raise ValidationError(
                    f"embedding dimension changed at doc {doc_id!r}"
                    f" ({dimension} -> {len(vector)})"
                )
            rows.append(_normalize(vector, f"doc {doc_id!r}"))
    matrix = np.stack(rows).astype(np.float32)
    return DenseIndex(doc_ids=doc_ids, matrix=matrix)


def search_dense(
    index: DenseIndex,
    query: "Query | str",
    backend,
    k: int,
    instruction_mode: str = "concat",
) -> list[tuple[str, float]]:
    """Top-k by cosine (dot product of unit vectors), ties by ascending doc id.

    Unlike sparse search, zero scores are returned: orthogonality is a valid
    similarity, not a non-match.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    text = query_text(query, instruction_mode)
    vector = _normalize(backend.embed([text])[0], "query")
    if vector.shape[0] != index.dimension:
        raise ValidationError(
            f"query embedding dimension {vector.shape[0]} does not match index"
            f" dimension {index.dimension}"
        )
    scores = index.matrix.astype(np.float64) @ vector
    hits = list(zip(index.doc_ids, (float(s) for s in scores)))
    hits.sort(key=lambda pair: (-pair[1], pair[0]))
    return hits[:k]


# ── Persistence: single binary files, versioned headers ──


def _write_block(handle, magic: bytes, header: dict, payload: bytes = b"") -> None:
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    handle.write(magic)
    handle.write(struct.pack("<Q", len(header_bytes)))
    handle.write(header_bytes)
    handle.write(payload)


def _read_block(path: str, magic: bytes) -> tuple[dict, bytes]:
    with open(path, "rb") as handle:
        found = handle.read(len(magic))
        if found != magic:
            raise ParseError(
                f"bad magic {found!r} (expected {magic!r}); wrong file type or version",
                path=path,
            )
        (header_len,) = struct.unpack("<Q", handle.read(8))
        header = json.loads(handle.read(header_len).decode("utf-8"))
        payload = handle.read()
    return header, payload


def save_sparse_index(index: SparseIndex, path: str) -> None:
    header = {
        "params": {
            "k1": index.params.k1,
            "b": index.params.b,
            "tokenizer": index.params.tokenizer,
        },
        "doc_ids": index.doc_ids,
        "doc_lengths": index.doc_lengths,
        "avg_doc_length": index.avg_doc_length,
        "postings": {term: plist for term, plist in index.postings.items()},
    }
    with open(path, "wb") as handle:
        _write_block(handle, SPARSE_MAGIC, header)


def load_sparse_index(path: str) -> SparseIndex:
    header, _ = _read_block(path, SPARSE_MAGIC)
    return SparseIndex(
        params=SparseIndexParams(**header["params"]),
        doc_ids=header["doc_ids"],
        doc_lengths=header["doc_lengths"],
        avg_doc_length=header["avg_doc_length"],
        postings={
            term: [(int(o), int(f)) for o, f in plist]
            for term, plist in header["postings"].items()
        },
    )


def save_dense_index(index: DenseIndex, path: str) -> None:
    header = {
        "dimension": index.dimension,
        "count": index.size,
        "dtype": "<f4",
        "doc_ids": index.doc_ids,
    }
    payload = np.ascontiguousarray(index.matrix, dtype="<f4").tobytes()
    with open(path, "wb") as handle:
        _write_block(handle, DENSE_MAGIC, header, payload)


def load_dense_index(path: str) -> DenseIndex:
    header, payload = _read_block(path, DENSE_MAGIC)
    count, dimension = int(header["count"]), int(header["dimension"])
    expected = count * dimension * 4
    if len(payload) != expected:
        raise ParseError(
            f"dense payload is {len(payload)} bytes, expected {expected}", path=path
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(count, dimension).copy()
    return DenseIndex(doc_ids=header["doc_ids"], matrix=matrix)


def index_kind(path: str) -> str:
    """Peek at a saved index file and report "sparse" or "dense"."""
    with open(path, "rb") as handle:
        magic = handle.read(8)
    if magic == SPARSE_MAGIC:
        return "sparse"
    if magic == DENSE_MAGIC:
        return "dense"
    raise ParseError(f"unrecognized index magic {magic!r}", path=path)
