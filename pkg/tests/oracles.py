"""Brute-force reference implementations used to cross-check the library.

Everything here is written straight from the defining formulas, favoring
clarity over speed, and deliberately shares no code with the package.
"""

import math
import re


def ref_ndcg(ranked_ids, gold, k):
    gains = []
    for doc_id in list(ranked_ids)[:k]:
        gains.append(1.0 if doc_id in gold else 0.0)
    dcg = 0.0
    for position, gain in enumerate(gains):
        dcg += gain / math.log2(position + 2)
    ideal_hits = min(len(gold), k)
    idcg = 0.0
    for position in range(ideal_hits):
        idcg += 1.0 / math.log2(position + 2)
    return dcg / idcg


def ref_recall(ranked_ids, gold, k):
    retrieved = set(list(ranked_ids)[:k])
    return len(retrieved & set(gold)) / len(gold)


def ref_completeness(ranked_ids, gold, k):
    retrieved = set(list(ranked_ids)[:k])
    return 1.0 if set(gold) <= retrieved else 0.0


_WORD = re.compile(r"[^\W_]+", re.UNICODE)


def ref_tokenize(text):
    return _WORD.findall(text.lower())


def ref_bm25_ranking(doc_texts, query_text, k1=1.2, b=0.75, k=None, keep_zero=False):
    """Quadratic-time BM25 over {doc_id: text}: recomputes df and tf by
    scanning, scores document-at-a-time, keeps only positive scores unless
    keep_zero is set.

    Returns [(doc_id, score)] sorted by score descending, doc id ascending.
    """
    doc_tokens = {doc_id: ref_tokenize(text) for doc_id, text in doc_texts.items()}
    n_docs = len(doc_tokens)
    avg_len = sum(len(tokens) for tokens in doc_tokens.values()) / n_docs
    query_tokens = ref_tokenize(query_text)
    scored = []
    for doc_id in doc_tokens:
        tokens = doc_tokens[doc_id]
        score = 0.0
        for term in query_tokens:
            tf = sum(1 for token in tokens if token == term)
            if tf == 0:
                continue
            df = sum(1 for other in doc_tokens.values() if term in other)
            idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
            norm = k1 * (1.0 - b + b * len(tokens) / avg_len)
            score += idf * tf * (k1 + 1.0) / (tf + norm)
        if score > 0.0 or keep_zero:
            scored.append((doc_id, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    if k is not None:
        scored = scored[:k]
    return scored


def ref_relevance_probability(logit_true, logit_false):
    """Textbook sigmoid, safe only for moderate logit gaps."""
    return 1.0 / (1.0 + math.exp(logit_false - logit_true))
