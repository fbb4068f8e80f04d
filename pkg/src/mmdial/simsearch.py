"""Exact top-k cosine similarity search over an embedding store.

No approximate indexes: stores here stay small enough (~1e5 rows) that a
blocked matrix product is fast, and exact results are required for
reproducible threshold calibration. ``topk_batch`` is a data-parallel map
over queries and is bitwise identical to ``topk_bruteforce`` per query for
every worker count and block size: each query runs the same float64
matrix-vector product against the same shared read-only matrix.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import EmbeddingStore


SIMILARITY_TOL = 1e-9


@dataclass(frozen=True)
class Match:
    image_id: str
    similarity: float

    def __post_init__(self) -> None:
        if not -1.0 - SIMILARITY_TOL <= self.similarity <= 1.0 + SIMILARITY_TOL:
            raise ValueError(
                f"cosine similarity {self.similarity!r} outside [-1, 1] for "
                f"image {self.image_id!r}"
            )


@dataclass(frozen=True)
class TopKResult:
    """Matches for one query, sorted by similarity desc, ties by image_id asc."""

    query_id: str
    matches: tuple[Match, ...]


def cosine(a, b) -> float:
    """Cosine similarity dot(a,b)/(|a||b|) of two equal-dimension vectors."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine is undefined for a zero vector")
    return float(np.dot(va, vb) / (na * nb))


def _unit_query(query, dimension: int) -> np.ndarray:
    vec = np.asarray(query, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != dimension:
        raise ValueError(f"query has shape {vec.shape}, store dimension is {dimension}")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ValueError("query vector has zero norm")
    return vec / norm


def _select_topk(ids: Sequence[str], sims: np.ndarray, k: int, floor: float) -> tuple[Match, ...]:
    eligible = np.flatnonzero(sims >= floor)
    if eligible.size > k:
        # argpartition finds the k-th value; keep boundary ties for exact
        # (similarity desc, image_id asc) ordering below
        part = np.argpartition(-sims[eligible], k - 1)
        kth = sims[eligible[part[k - 1]]]
        eligible = eligible[sims[eligible] >= kth]
    order = sorted(eligible.tolist(), key=lambda i: (-sims[i], ids[i]))[:k]
    return tuple(Match(ids[i], float(sims[i])) for i in order)


def topk_bruteforce(
    query,
    store: EmbeddingStore,
    k: int,
    floor: float,
    *,
    query_id: str = "",
) -> TopKResult:
    """Exact top-k scan: the k highest-cosine rows with similarity >= floor."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not store.normalized:
        raise ValueError("similarity search requires a normalized store")
    unit = _unit_query(query, store.dimension)
    sims = store.matrix @ unit
    return TopKResult(query_id, _select_topk(store.ids, sims, k, floor))


def topk_batch(
    queries: Iterable[tuple[str, Sequence[float]]],
    store: EmbeddingStore,
    k: int,
    floor: float,
    *,
    workers: int = 1,
    block_size: int = 128,
) -> list[TopKResult]:
    """Run ``topk_bruteforce`` for every (query_id, vector), in input order.

    Queries are independent and the store is shared read-only, so blocks
    may run on any number of threads without changing a single bit of the
    output.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    items = list(queries)

    def run_block(block: list[tuple[str, Sequence[float]]]) -> list[TopKResult]:
        return [topk_bruteforce(vec, store, k, floor, query_id=qid) for qid, vec in block]

    blocks = [items[i:i + block_size] for i in range(0, len(items), block_size)]
    if workers == 1 or len(blocks) <= 1:
        results = [run_block(block) for block in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_block, blocks))
    return [res for block in results for res in block]
