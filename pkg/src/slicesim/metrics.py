"""Retrieval metrics over 1-indexed ranks of the ground-truth item."""

from __future__ import annotations

from typing import Iterable, Sequence

__all__ = ["rank_of", "recall_at_k", "mrr"]


def rank_of(distances: Sequence[float], truth_index: int) -> int:
    """1-indexed rank of entry `truth_index` when sorting distances
    ascending.  Ties keep the original pool order (stable sort), so a
    distractor that exactly ties the ground truth but appears earlier in
    the pool outranks it.
    """
    order = sorted(range(len(distances)), key=lambda i: (distances[i], i))
    return order.index(truth_index) + 1


def recall_at_k(ranks: Iterable[int], k: int) -> float:
    """Fraction of queries whose ground truth landed in the top k."""
    ranks = list(ranks)
    if not ranks:
        raise ValueError("no ranks")
    if k < 1:
        raise ValueError("k must be positive")
    return sum(1 for r in ranks if r <= k) / len(ranks)


def mrr(ranks: Iterable[int], cutoff: int | None = 10) -> float:
    """Mean reciprocal rank.  With the default cutoff, ranks beyond it
    contribute zero; pass ``cutoff=None`` to count every rank.
    """
    ranks = list(ranks)
    if not ranks:
        raise ValueError("no ranks")
    if cutoff is not None and cutoff < 1:
        raise ValueError("cutoff must be positive or None")
    total = 0.0
    for r in ranks:
        if r < 1:
            raise ValueError("ranks are 1-indexed")
        if cutoff is None or r <= cutoff:
            total += 1.0 / r
    return total / len(ranks)
