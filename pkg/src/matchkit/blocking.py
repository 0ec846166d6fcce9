"""Candidate-pair generation so matching never scans the full cross product.

A TF-IDF weighted token index ranks, for every left-side record, the
right-side records sharing vocabulary; only the top-k per record survive.
Weights use tf = raw count and idf = ln((N+1)/(df+1)) + 1, the zero-df-safe
smooth variant, and scores are cosines of the weighted vectors.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from . import assets
from .core import EntityPair, EntityRecord


def blocking_tokens(record: EntityRecord) -> list[str]:
    return record.value_text().lower().split()


@dataclass(frozen=True)
class TokenIndex:
    postings: dict[str, tuple[str, ...]]  # token -> entity ids, sorted
    token_counts: dict[str, Counter]  # entity id -> token multiset
    records: dict[str, EntityRecord]

    @property
    def doc_count(self) -> int:
        return len(self.records)

    def df(self, token: str) -> int:
        return len(self.postings.get(token, ()))


def build_index(entities: Iterable[EntityRecord]) -> TokenIndex:
    """Index records by lowercased whitespace tokens."""
    postings: dict[str, list[str]] = {}
    token_counts: dict[str, Counter] = {}
    records: dict[str, EntityRecord] = {}
    for record in entities:
        if record.entity_id in records:
            raise ValueError(f"duplicate entity id {record.entity_id!r}")
        counts = Counter(blocking_tokens(record))
        records[record.entity_id] = record
        token_counts[record.entity_id] = counts
        for token in counts:
            postings.setdefault(token, []).append(record.entity_id)
    return TokenIndex(
        postings={t: tuple(sorted(ids)) for t, ids in postings.items()},
        token_counts=token_counts,
        records=records,
    )


def _idf(token: str, index_a: TokenIndex, index_b: TokenIndex, total_docs: int) -> float:
    df = index_a.df(token) + index_b.df(token)
    return math.log((total_docs + 1) / (df + 1)) + 1.0


def candidate_pairs(
    index_a: TokenIndex,
    index_b: TokenIndex,
    top_k: int,
    min_shared: int,
    stopword_set: frozenset[str] | None = None,
) -> list[EntityPair]:
    """Rank, per left record, the right records by TF-IDF cosine; keep top-k.

    Pairs sharing fewer than ``min_shared`` non-stopword tokens are dropped.
    Deterministic: candidates are scanned in left-id order and score ties
    break by right-entity id, so growing ``top_k`` only appends candidates.
    """
    if top_k < 1 or min_shared < 1:
        raise ValueError("top_k and min_shared must be >= 1")
    if stopword_set is None:
        stopword_set = assets.stopwords()

    total_docs = index_a.doc_count + index_b.doc_count
    idf = {
        token: _idf(token, index_a, index_b, total_docs)
        for token in set(index_a.postings) | set(index_b.postings)
    }

    def norm(counts: Counter) -> float:
        return math.sqrt(sum((tf * idf[t]) ** 2 for t, tf in counts.items()))

    norms_b = {eid: norm(counts) for eid, counts in index_b.token_counts.items()}

    pairs: list[EntityPair] = []
    for a_id in sorted(index_a.records):
        a_counts = index_a.token_counts[a_id]
        a_norm = norm(a_counts)
        if a_norm == 0.0:
            continue
        dots: dict[str, float] = {}
        shared: dict[str, int] = {}
        for token, a_tf in a_counts.items():
            weight_a = a_tf * idf[token]
            for b_id in index_b.postings.get(token, ()):
                b_tf = index_b.token_counts[b_id][token]
                dots[b_id] = dots.get(b_id, 0.0) + weight_a * b_tf * idf[token]
                if token not in stopword_set:
                    shared[b_id] = shared.get(b_id, 0) + 1
        scored = [
            (dots[b_id] / (a_norm * norms_b[b_id]), b_id)
            for b_id in dots
            if shared.get(b_id, 0) >= min_shared and norms_b[b_id] > 0.0
        ]
        scored.sort(key=lambda item: (-item[0], item[1]))
        for _, b_id in scored[:top_k]:
            pairs.append(
                EntityPair(
                    a=index_a.records[a_id],
                    b=index_b.records[b_id],
                    label=None,
                    pair_id=f"{a_id}|{b_id}",
                )
            )
    return pairs
