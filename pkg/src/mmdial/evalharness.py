"""Dialogue sentence prediction tasks and the tf-idf retrieval baseline.

Two tasks: retrieve the replaced sentence (current) or the sentence after
the image (next), given the image caption plus up to three preceding turns.
Each example ranks 100 candidates: the ground truth and 99 distractors
drawn from the split's pool of ground-truth sentences.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .builder import Instance
from .corpus import ImageRecord
from .preprocess import tokenize

TASKS = ("current", "next")


@dataclass(frozen=True)
class TaskExample:
    task: str
    instance_id: str
    context_texts: tuple[str, ...]
    caption: str
    ground_truth: str
    candidates: tuple[tuple[str, str], ...]
    truth_id: str


def _ground_truth(instance: Instance, task: str) -> str | None:
    if task == "current":
        return instance.target_sentence
    return instance.next_sentence


def make_tasks(
    instances: Sequence[Instance],
    images: Iterable[ImageRecord] | Mapping[str, ImageRecord],
    task: str,
    seed: int,
    *,
    n_candidates: int = 100,
) -> list[TaskExample]:
    """Build one example per eligible instance, with deterministic candidates.

    Distractors are drawn uniformly without replacement from the split's
    pool of ground-truth sentences for the same task, never including the
    example's own; candidate order is a seeded shuffle. For the next task,
    instances whose target was the final turn are excluded.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    if n_candidates < 2:
        raise ValueError(f"need at least 2 candidates, got {n_candidates}")
    if isinstance(images, Mapping):
        image_by_id = dict(images)
    else:
        image_by_id = {img.image_id: img for img in images}

    eligible = [inst for inst in instances if _ground_truth(inst, task) is not None]
    if not eligible:
        raise ValueError(f"no eligible instances for task {task!r}")
    pool = sorted({_ground_truth(inst, task) for inst in eligible})
    if len(pool) < n_candidates:
        raise ValueError(
            f"candidate pool has {len(pool)} sentences; need at least {n_candidates}"
        )

    id_width = len(str(n_candidates - 1))
    rng = np.random.default_rng(seed)
    examples: list[TaskExample] = []
    for inst in eligible:
        image = image_by_id.get(inst.image_id)
        if image is None:
            raise ValueError(f"instance {inst.instance_id!r} references unknown image")
        truth = _ground_truth(inst, task)
        others = [s for s in pool if s != truth]
        picked = rng.choice(len(others), size=n_candidates - 1, replace=False)
        texts = [truth] + [others[i] for i in picked]
        order = rng.permutation(n_candidates)
        candidates = tuple(
            (f"c{j:0{id_width}d}", texts[order[j]]) for j in range(n_candidates)
        )
        truth_pos = int(np.flatnonzero(order == 0)[0])
        examples.append(TaskExample(
            task=task,
            instance_id=inst.instance_id,
            context_texts=tuple(t.text for t in inst.context_turns[-3:]),
            caption=image.caption,
            ground_truth=truth,
            candidates=candidates,
            truth_id=candidates[truth_pos][0],
        ))
    return examples


# --------------------------------------------------------------------------
# tf-idf ranking

def compute_idf(idf_corpus: Sequence[str]) -> dict[str, float]:
    """Smoothed idf over a sentence corpus: ln((N+1)/(df+1)) + 1."""
    if not idf_corpus:
        raise ValueError("idf corpus is empty")
    df: Counter[str] = Counter()
    for sentence in idf_corpus:
        df.update(set(tokenize(sentence)))
    n = len(idf_corpus)
    return {token: math.log((n + 1) / (count + 1)) + 1.0 for token, count in df.items()}


def _tfidf_vector(tokens: Sequence[str], idf: Mapping[str, float], n_docs: int) -> dict[str, float]:
    unseen = math.log(n_docs + 1) + 1.0  # df = 0
    vec: dict[str, float] = {}
    for token, count in Counter(tokens).items():
        vec[token] = count * idf.get(token, unseen)
    return vec


def _sparse_cosine(a: Mapping[str, float], b: Mapping[str, float]) -> float:
    dot = sum(weight * b[token] for token, weight in a.items() if token in b)
    if dot == 0.0:
        return 0.0
    norm_a = math.sqrt(sum(w * w for w in a.values()))
    norm_b = math.sqrt(sum(w * w for w in b.values()))
    return dot / (norm_a * norm_b)


def tfidf_rank(
    example: TaskExample,
    idf_corpus: Sequence[str],
    *,
    idf: Mapping[str, float] | None = None,
) -> list[tuple[str, float]]:
    """Rank the example's candidates by tf-idf cosine against the query.

    The query is the image caption's tokens followed by the (up to three)
    context turns'; candidates sharing no token all score 0 and fall back to
    id order. Pass a precomputed ``idf`` to amortize corpus scans.
    """
    if idf is None:
        idf = compute_idf(idf_corpus)
    n_docs = len(idf_corpus)
    query_tokens = tokenize(example.caption)
    for text in example.context_texts:
        query_tokens.extend(tokenize(text))
    query_vec = _tfidf_vector(query_tokens, idf, n_docs)
    scored = [
        (cid, _sparse_cosine(query_vec, _tfidf_vector(tokenize(text), idf, n_docs)))
        for cid, text in example.candidates
    ]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored


def rank_of_truth(example: TaskExample, ranking: Sequence[tuple[str, float]]) -> int:
    for position, (cid, _) in enumerate(ranking, start=1):
        if cid == example.truth_id:
            return position
    raise ValueError(f"ground truth {example.truth_id!r} missing from ranking")


# --------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class EvalMetrics:
    r_at_1: float
    r_at_5: float
    mean_rank: float
    mrr: float
    n: int


def score(rankings: Sequence[int], *, n_candidates: int = 100) -> EvalMetrics:
    """Aggregate ground-truth ranks into R@1, R@5, mean rank, and MRR."""
    if not rankings:
        raise ValueError("no rankings to score")
    for rank in rankings:
        if not isinstance(rank, int) or not 1 <= rank <= n_candidates:
            raise ValueError(f"rank {rank!r} outside [1,{n_candidates}]")
    n = len(rankings)
    return EvalMetrics(
        r_at_1=sum(1 for r in rankings if r <= 1) / n,
        r_at_5=sum(1 for r in rankings if r <= 5) / n,
        mean_rank=sum(rankings) / n,
        mrr=sum(1.0 / r for r in rankings) / n,
        n=n,
    )


def evaluate(
    instances: Sequence[Instance],
    images: Iterable[ImageRecord] | Mapping[str, ImageRecord],
    task: str,
    seed: int,
    *,
    n_candidates: int = 100,
) -> tuple[EvalMetrics, list[tuple[str, int]]]:
    """Run the tf-idf baseline end to end; returns metrics and per-example ranks."""
    examples = make_tasks(instances, images, task, seed, n_candidates=n_candidates)
    pool = sorted({ex.ground_truth for ex in examples})
    idf = compute_idf(pool)
    ranks: list[tuple[str, int]] = []
    for ex in examples:
        ranking = tfidf_rank(ex, pool, idf=idf)
        ranks.append((ex.instance_id, rank_of_truth(ex, ranking)))
    metrics = score([rank for _, rank in ranks], n_candidates=n_candidates)
    return metrics, ranks
