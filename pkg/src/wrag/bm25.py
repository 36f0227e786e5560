"""Okapi BM25 ranked keyword retrieval, built from scratch.

Scoring uses the non-negative IDF variant

    idf(t) = ln((N - n_t + 0.5) / (n_t + 0.5) + 1)

and the standard TF factor

    tf(t, d) = f * (k1 + 1) / (f + k1 * (1 - b + b * len(d) / avglen))

summed over the unique query terms. The +1 inside the log keeps every score
finite and >= 0. Tokenization is shared with the local embedder so the
keyword baseline and the dense pipeline see identical token streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .embedding import tokenize
from .errors import DuplicateChunkError, EmptyInputError, WragError
from .model import Chunk

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


@dataclass
class Bm25Index:
    """Sealed term statistics over one chunk corpus; read-only after build."""

    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    doc_count: int
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    _doc_terms: dict[str, dict[str, int]] = field(default_factory=dict, repr=False)


def bm25_build(chunks: list[Chunk], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Bm25Index:
    if not chunks:
        raise EmptyInputError("BM25 is undefined over an empty corpus (N=0)")
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    doc_terms: dict[str, dict[str, int]] = {}
    for chunk in chunks:
        if chunk.chunk_id in doc_lengths:
            raise DuplicateChunkError(f"duplicate chunk_id {chunk.chunk_id!r}")
        tokens = tokenize(chunk.text)
        if not tokens:
            raise EmptyInputError(
                f"chunk {chunk.chunk_id!r} tokenized to zero tokens"
            )
        doc_lengths[chunk.chunk_id] = len(tokens)
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        doc_terms[chunk.chunk_id] = counts
        for term, freq in counts.items():
            postings.setdefault(term, []).append((chunk.chunk_id, freq))
    avg = sum(doc_lengths.values()) / len(doc_lengths)
    return Bm25Index(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        doc_count=len(doc_lengths),
        k1=k1,
        b=b,
        _doc_terms=doc_terms,
    )


def _idf(index: Bm25Index, term: str) -> float:
    n_t = len(index.postings.get(term, ()))
    return math.log((index.doc_count - n_t + 0.5) / (n_t + 0.5) + 1.0)


def _tf_factor(index: Bm25Index, freq: int, doc_len: int) -> float:
    norm = 1.0 - index.b + index.b * doc_len / index.avg_doc_length
    return freq * (index.k1 + 1.0) / (freq + index.k1 * norm)


def _unique_terms(query: str) -> list[str]:
    return list(dict.fromkeys(tokenize(query)))


def bm25_score(index: Bm25Index, query: str, chunk_id: str) -> float:
    """Okapi BM25 score of one chunk for a query; absent terms contribute 0."""
    if chunk_id not in index.doc_lengths:
        raise WragError(f"unknown chunk_id {chunk_id!r}")
    counts = index._doc_terms[chunk_id]
    doc_len = index.doc_lengths[chunk_id]
    score = 0.0
    for term in _unique_terms(query):
        freq = counts.get(term, 0)
        if freq == 0:
            continue
        score += _idf(index, term) * _tf_factor(index, freq, doc_len)
    return score


def bm25_search(index: Bm25Index, query: str, k: int) -> list[tuple[str, float]]:
    """Top-k chunks by descending score; zero-score chunks are excluded.

    Ties break by chunk_id lexicographically. Accumulation order per
    document matches bm25_score exactly (same unique-term order), so search
    scores equal bm25_score bit-for-bit.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores: dict[str, float] = {}
    for term in _unique_terms(query):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = _idf(index, term)
        for chunk_id, freq in plist:
            contrib = idf * _tf_factor(index, freq, index.doc_lengths[chunk_id])
            scores[chunk_id] = scores.get(chunk_id, 0.0) + contrib
    ranked = sorted(
        ((cid, s) for cid, s in scores.items() if s > 0.0),
        key=lambda item: (-item[1], item[0]),
    )
    return ranked[:k]
