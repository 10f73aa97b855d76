"""Tokenization, BM25 scoring against a brute-force reference, dense retrieval,
and index persistence."""

import math
import random

import pytest

from conftest import WORDS, make_query
from oracles import ref_bm25_ranking, ref_tokenize
from toolde.backends import HashingEmbeddingBackend
from toolde.errors import ParseError, ValidationError
from toolde.retrieval import (
    SparseIndexParams,
    bm25_score,
    build_dense_index,
    build_sparse_index,
    index_kind,
    load_dense_index,
    load_sparse_index,
    query_text,
    save_dense_index,
    save_sparse_index,
    search_dense,
    search_sparse,
    tokenize,
)


def test_tokenize_splits_non_alphanumeric_and_underscores() -> None:
    assert tokenize("Hello, World!") == ["hello", "world"]
    assert tokenize("snake_case-kebab.dot") == ["snake", "case", "kebab", "dot"]
    assert tokenize("v2.0 HTTP/1.1") == ["v2", "0", "http", "1", "1"]
    assert tokenize("café 中文") == ["café", "中文"]
    assert tokenize("") == []
    assert tokenize("!!!") == []


def _random_doc_texts(rng: random.Random, n_docs: int) -> dict[str, str]:
    return {
        f"d{i:02d}": " ".join(rng.choices(WORDS, k=rng.randint(1, 30))) for i in range(n_docs)
    }


def test_search_sparse_matches_bruteforce_reference() -> None:
    rng = random.Random(101)
    for _ in range(25):
        doc_texts = _random_doc_texts(rng, rng.randint(2, 12))
        index = build_sparse_index(sorted(doc_texts.items()))
        query = " ".join(rng.choices(WORDS, k=rng.randint(1, 6)))
        got = search_sparse(index, query, k=len(doc_texts))
        want = ref_bm25_ranking(doc_texts, query)
        assert [doc_id for doc_id, _ in got] == [doc_id for doc_id, _ in want]
        for (_, got_score), (_, want_score) in zip(got, want):
            assert got_score == pytest.approx(want_score, abs=1e-9)


def test_bm25_single_term_hand_value() -> None:
    # Three docs, term "apple" in two of them; scoring doc d0 (length 2).
    index = build_sparse_index([("d0", "apple pie"), ("d1", "apple"), ("d2", "banana split")])
    n, df, tf = 3, 2, 1
    doc_len, avg_len = 2, 5 / 3
    idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
    expected = idf * tf * (1.2 + 1) / (tf + 1.2 * (1 - 0.75 + 0.75 * doc_len / avg_len))
    assert bm25_score(index, ["apple"], "d0") == pytest.approx(expected, abs=1e-12)
    # Repeated query terms score per occurrence.
    assert bm25_score(index, ["apple", "apple"], "d0") == pytest.approx(2 * expected, abs=1e-12)


def test_search_sparse_filters_zero_scores_and_breaks_ties_by_id() -> None:
    index = build_sparse_index([("b", "apple"), ("a", "apple"), ("c", "banana")])
    results = search_sparse(index, "apple", k=10)
    assert [doc_id for doc_id, _ in results] == ["a", "b"]
    assert results[0][1] == results[1][1]
    assert search_sparse(index, "cherry", k=10) == []


def test_search_sparse_k_and_validation() -> None:
    index = build_sparse_index([("a", "x y"), ("b", "x")])
    assert len(search_sparse(index, "x", k=1)) == 1
    with pytest.raises(ValidationError):
        search_sparse(index, "x", k=0)
    with pytest.raises(ValidationError):
        search_sparse(index, "x", k=1, instruction_mode="bogus")
    with pytest.raises(ValidationError):
        build_sparse_index([])
    with pytest.raises(ValidationError):
        build_sparse_index([("a", "x"), ("a", "y")])


def test_sparse_params_validation() -> None:
    with pytest.raises(ValidationError):
        SparseIndexParams(k1=-0.1)
    with pytest.raises(ValidationError):
        SparseIndexParams(b=1.5)
    custom = build_sparse_index([("a", "x x x"), ("b", "x y")], SparseIndexParams(k1=0.0, b=0.0))
    # k1=0 makes term frequency irrelevant: both docs score identically.
    results = search_sparse(custom, "x", k=2)
    assert results[0][1] == pytest.approx(results[1][1], abs=1e-12)


def test_query_text_instruction_modes() -> None:
    query = make_query(1, text="find maps", instruction="use geo tools")
    assert query_text(query, "query_only") == "find maps"
    assert query_text(query, "concat") == "use geo tools\nfind maps"
    bare = make_query(2, text="plain")
    assert query_text(bare, "concat") == "plain"
    assert query_text("raw string", "concat") == "raw string"
    with pytest.raises(ValidationError):
        query_text(query, "bogus")


def test_dense_index_build_and_search() -> None:
    backend = HashingEmbeddingBackend(dimension=16)
    pairs = [
        ("d1", "weather forecast city"),
        ("d2", "stock price chart"),
        ("d3", "weather map traffic"),
    ]
    index = build_dense_index(pairs, backend, batch_size=2)
    assert index.size == 3 and index.dimension == 16
    for row in index.matrix:
        assert sum(float(x) * float(x) for x in row) == pytest.approx(1.0, abs=1e-6)
    results = search_dense(index, "weather forecast", backend, k=3)
    assert results[0][0] == "d1"
    assert {doc_id for doc_id, _ in results} == {"d1", "d2", "d3"}
    scores = [score for _, score in results]
    assert scores == sorted(scores, reverse=True)


def test_dense_search_uses_instruction_concat_by_default() -> None:
    backend = HashingEmbeddingBackend(dimension=32)
    index = build_dense_index([("d1", "alpha beta"), ("d2", "gamma delta")], backend)
    query = make_query(1, text="alpha", instruction="gamma gamma gamma")
    with_instruction = search_dense(index, query, backend, k=2)
    query_only = search_dense(index, query, backend, k=2, instruction_mode="query_only")
    assert query_only[0][0] == "d1"
    assert with_instruction[0][0] == "d2"


def test_dense_index_rejects_zero_vectors() -> None:
    backend = HashingEmbeddingBackend(dimension=8)
    with pytest.raises(ValidationError):
        build_dense_index([("d1", "...")], backend)  # no tokens -> zero vector


def test_sparse_index_persistence_round_trip(tmp_path) -> None:
    rng = random.Random(5)
    doc_texts = _random_doc_texts(rng, 8)
    index = build_sparse_index(sorted(doc_texts.items()), SparseIndexParams(k1=1.6, b=0.6))
    path = str(tmp_path / "index.sparse")
    save_sparse_index(index, path)
    assert index_kind(path) == "sparse"
    loaded = load_sparse_index(path)
    query = " ".join(rng.choices(WORDS, k=4))
    assert search_sparse(loaded, query, k=8) == search_sparse(index, query, k=8)
    assert loaded.params == index.params


def test_dense_index_persistence_round_trip(tmp_path) -> None:
    backend = HashingEmbeddingBackend(dimension=8)
    index = build_dense_index([("d1", "alpha beta"), ("d2", "gamma")], backend)
    path = str(tmp_path / "index.dense")
    save_dense_index(index, path)
    assert index_kind(path) == "dense"
    loaded = load_dense_index(path)
    assert loaded.doc_ids == index.doc_ids
    assert loaded.matrix.tobytes() == index.matrix.tobytes()
    assert search_dense(loaded, "alpha", backend, k=2) == search_dense(index, "alpha", backend, k=2)


def test_index_files_reject_foreign_content(tmp_path) -> None:
    path = tmp_path / "junk.bin"
    path.write_bytes(b"GARBAGE!" + b"\x00" * 32)
    with pytest.raises(ParseError):
        index_kind(str(path))
    with pytest.raises(ParseError):
        load_sparse_index(str(path))
    # A valid sparse file is not a dense file.
    index = build_sparse_index([("a", "x")])
    sparse_path = str(tmp_path / "index.sparse")
    save_sparse_index(index, sparse_path)
    with pytest.raises(ParseError):
        load_dense_index(sparse_path)


def test_reference_tokenizer_agrees_with_library() -> None:
    rng = random.Random(7)
    for _ in range(50):
        text = " ".join(rng.choices(WORDS + ["Mixed_Case", "hy-phen", "2025!"], k=8))
        assert tokenize(text) == ref_tokenize(text)
