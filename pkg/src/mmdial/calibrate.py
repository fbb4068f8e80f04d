"""Similarity-threshold calibration from human annotation scores.

Instances of one (dialogue source, image source) combination are sorted by
similarity and cut into ten equal-count segments; up to 30 per segment are
sampled for annotation. Each question's segment-mean scores form a curve
over segment-mean similarity; the threshold for a question is where that
curve crosses the score scale's median (2 for q1/q2, 3 for q3), and the
combination's chosen threshold is the largest of the three. Filtering keeps
instances whose similarity strictly exceeds the chosen threshold.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .builder import Instance
from .corpus import LoadError, atomic_write

QUESTIONS = ("q1", "q2", "q3")

# inclusive score ranges per question
SCORE_RANGES = {"q1": (1, 3), "q2": (1, 3), "q3": (1, 5), "q4": (1, 4)}

# median of each question's scale: instances scoring above it are usable
SCORE_TARGETS = {"q1": 2.0, "q2": 2.0, "q3": 3.0}

NUM_SEGMENTS = 10
SAMPLES_PER_SEGMENT = 30

ANNOTATION_FIELDS = ("instance_id", "annotator_id", "q1", "q2", "q3", "q4")


@dataclass(frozen=True)
class AnnotationRecord:
    instance_id: str
    annotator_id: str
    q1: int
    q2: int
    q3: int
    q4: int | None = None

    def __post_init__(self) -> None:
        if not self.instance_id or not self.annotator_id:
            raise ValueError("instance_id and annotator_id must be non-empty")
        for question in ("q1", "q2", "q3", "q4"):
            value = getattr(self, question)
            if question == "q4" and value is None:
                continue
            low, high = SCORE_RANGES[question]
            if not isinstance(value, int) or not low <= value <= high:
                raise ValueError(
                    f"{question} must be an integer in [{low},{high}], got {value!r}"
                )

    def score(self, question: str) -> int:
        return getattr(self, question)


def load_annotations(path) -> list[AnnotationRecord]:
    """Read an annotation CSV (header: instance_id,annotator_id,q1,q2,q3,q4)."""
    path = Path(path)
    records: list[AnnotationRecord] = []
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        if header != ANNOTATION_FIELDS:
            raise LoadError(f"{path}: expected header {','.join(ANNOTATION_FIELDS)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                record = AnnotationRecord(
                    instance_id=row["instance_id"],
                    annotator_id=row["annotator_id"],
                    q1=int(row["q1"]),
                    q2=int(row["q2"]),
                    q3=int(row["q3"]),
                    q4=int(row["q4"]) if (row["q4"] or "").strip() else None,
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise LoadError(f"{path}:{lineno}: bad annotation row: {exc}") from None
            pair = (record.instance_id, record.annotator_id)
            if pair in seen:
                raise LoadError(f"{path}:{lineno}: duplicate annotation for {pair}")
            seen.add(pair)
            records.append(record)
    return records


def write_annotations(path, records: Iterable[AnnotationRecord]) -> None:
    with atomic_write(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_FIELDS)
        for rec in records:
            writer.writerow([
                rec.instance_id, rec.annotator_id, rec.q1, rec.q2, rec.q3,
                "" if rec.q4 is None else rec.q4,
            ])


# --------------------------------------------------------------------------
# segment sampling

@dataclass(frozen=True)
class Segment:
    """One similarity-quantile group: population bounds plus the sampled ids."""

    low: float
    high: float
    instance_ids: tuple[str, ...]


@dataclass(frozen=True)
class SegmentSample:
    combination: tuple[str, str]
    segments: tuple[Segment, ...]
    seed: int


def sample_for_annotation(
    instances: Sequence[Instance],
    seed: int,
    *,
    per_segment: int = SAMPLES_PER_SEGMENT,
    num_segments: int = NUM_SEGMENTS,
) -> SegmentSample:
    """Split one combination's instances into similarity quantile segments and
    sample up to ``per_segment`` ids from each, uniformly without replacement.

    Deterministic for a fixed seed; segment bounds depend only on the data.
    """
    if not instances:
        raise ValueError("cannot sample from an empty instance list")
    combinations = {inst.combination for inst in instances}
    if len(combinations) != 1:
        raise ValueError(f"instances span multiple combinations: {sorted(combinations)}")
    if len(instances) < num_segments:
        raise ValueError(
            f"need at least {num_segments} instances to build {num_segments} segments, "
            f"got {len(instances)}"
        )
    ordered = sorted(instances, key=lambda inst: (inst.similarity, inst.instance_id))
    base, remainder = divmod(len(ordered), num_segments)
    # remainder goes to the lowest-similarity segments
    sizes = [base + 1] * remainder + [base] * (num_segments - remainder)

    rng = np.random.default_rng(seed)
    segments: list[Segment] = []
    start = 0
    for size in sizes:
        block = ordered[start:start + size]
        start += size
        take = min(per_segment, len(block))
        picked = np.sort(rng.choice(len(block), size=take, replace=False))
        segments.append(Segment(
            low=block[0].similarity,
            high=block[-1].similarity,
            instance_ids=tuple(block[i].instance_id for i in picked),
        ))
    return SegmentSample((combinations.pop()), tuple(segments), seed)


# --------------------------------------------------------------------------
# rank correlation

def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.lexsort((np.arange(len(values)), values))
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman's rank correlation: Pearson over average ranks (ties averaged)."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError(f"length mismatch: {xa.shape} vs {ya.shape}")
    if len(xa) < 2:
        raise ValueError("need at least 2 observations")
    if np.all(xa == xa[0]) or np.all(ya == ya[0]):
        raise ValueError("correlation is undefined for a constant input")
    rx = _average_ranks(xa)
    ry = _average_ranks(ya)
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))


# --------------------------------------------------------------------------
# threshold interpolation

def interpolate_threshold(
    curve: Sequence[tuple[float, float]], target_score: float
) -> float | None:
    """Largest similarity where the piecewise-linear curve crosses
    ``target_score`` from below.

    Returns the first point's similarity when the whole curve already sits
    at or above the target, and None when the curve never reaches it. Taking
    the largest upward crossing keeps non-monotone curves conservative
    (higher threshold, stricter filtering).
    """
    if len(curve) < 2:
        raise ValueError(f"need at least 2 curve points, got {len(curve)}")
    sims = [float(s) for s, _ in curve]
    scores = [float(y) for _, y in curve]
    if any(b <= a for a, b in zip(sims, sims[1:])):
        raise ValueError("curve points must be strictly ascending in similarity")
    candidates: list[float] = []
    if scores[0] >= target_score:
        candidates.append(sims[0])
    for (s0, y0), (s1, y1) in zip(curve, curve[1:]):
        if y0 < target_score <= y1:
            candidates.append(s0 + (target_score - y0) / (y1 - y0) * (s1 - s0))
    return max(candidates) if candidates else None


# --------------------------------------------------------------------------
# calibration

@dataclass(frozen=True)
class CombinationCalibration:
    combination: tuple[str, str]
    curves: dict[str, tuple[tuple[float, float], ...]]
    thresholds: dict[str, float | None]
    chosen: float | None
    total: int
    kept: int


@dataclass(frozen=True)
class ThresholdReport:
    combinations: dict[tuple[str, str], CombinationCalibration]
    seed: int


def _segment_curves(
    sample: SegmentSample,
    similarity_by_id: Mapping[str, float],
    records_by_id: Mapping[str, list[AnnotationRecord]],
) -> dict[str, tuple[tuple[float, float], ...]]:
    curves: dict[str, list[tuple[float, float]]] = {q: [] for q in QUESTIONS}
    for segment in sample.segments:
        annotated = [iid for iid in segment.instance_ids if records_by_id.get(iid)]
        if not annotated:
            continue
        mean_sim = float(np.mean([similarity_by_id[iid] for iid in annotated]))
        for question in QUESTIONS:
            scores = [
                rec.score(question) for iid in annotated for rec in records_by_id[iid]
            ]
            curves[question].append((mean_sim, float(np.mean(scores))))
    return {q: tuple(points) for q, points in curves.items()}


def calibrate(
    instances: Sequence[Instance],
    annotations: Sequence[AnnotationRecord],
    seed: int,
    *,
    per_segment: int = SAMPLES_PER_SEGMENT,
) -> ThresholdReport:
    """Calibrate per-combination thresholds from annotation scores.

    Combinations whose curves never reach a score target (or with too few
    instances to segment) come back uncalibrated: chosen is None and
    filtering treats them as keep-everything.
    """
    known_ids = {inst.instance_id for inst in instances}
    records_by_id: dict[str, list[AnnotationRecord]] = defaultdict(list)
    for rec in annotations:
        if rec.instance_id not in known_ids:
            raise ValueError(f"annotation references unknown instance {rec.instance_id!r}")
        records_by_id[rec.instance_id].append(rec)

    similarity_by_id = {inst.instance_id: inst.similarity for inst in instances}
    by_combination: dict[tuple[str, str], list[Instance]] = defaultdict(list)
    for inst in instances:
        by_combination[inst.combination].append(inst)

    result: dict[tuple[str, str], CombinationCalibration] = {}
    for combination in sorted(by_combination):
        group = by_combination[combination]
        total = len(group)
        if len(group) < NUM_SEGMENTS:
            result[combination] = CombinationCalibration(
                combination, {q: () for q in QUESTIONS},
                {q: None for q in QUESTIONS}, None, total, total,
            )
            continue
        sample = sample_for_annotation(group, seed, per_segment=per_segment)
        curves = _segment_curves(sample, similarity_by_id, records_by_id)
        thresholds: dict[str, float | None] = {}
        for question in QUESTIONS:
            curve = curves[question]
            if len(curve) < 2:
                thresholds[question] = None
            else:
                thresholds[question] = interpolate_threshold(curve, SCORE_TARGETS[question])
        available = [t for t in thresholds.values() if t is not None]
        chosen = max(available) if available else None
        kept = total if chosen is None else sum(1 for inst in group if inst.similarity > chosen)
        result[combination] = CombinationCalibration(
            combination, curves, thresholds, chosen, total, kept,
        )
    return ThresholdReport(result, seed)


def correlation_matrix(
    instances: Sequence[Instance], annotations: Sequence[AnnotationRecord]
) -> dict[tuple[str, str], float | None]:
    """Pairwise Spearman over {similarity, q1, q2, q3}, one point per
    annotation record; None where a side is constant."""
    similarity_by_id = {inst.instance_id: inst.similarity for inst in instances}
    columns: dict[str, list[float]] = {"similarity": [], "q1": [], "q2": [], "q3": []}
    for rec in annotations:
        if rec.instance_id not in similarity_by_id:
            raise ValueError(f"annotation references unknown instance {rec.instance_id!r}")
        columns["similarity"].append(similarity_by_id[rec.instance_id])
        for question in QUESTIONS:
            columns[question].append(float(rec.score(question)))
    labels = ("similarity", "q1", "q2", "q3")
    matrix: dict[tuple[str, str], float | None] = {}
    for i, a in enumerate(labels):
        for b in labels[i + 1:]:
            try:
                matrix[(a, b)] = spearman_rho(columns[a], columns[b])
            except ValueError:
                matrix[(a, b)] = None
    return matrix


@dataclass(frozen=True)
class CorrelationReport:
    """Spearman matrices pooled over all records and per combination."""

    pooled: dict[tuple[str, str], float | None]
    per_combination: dict[tuple[str, str], dict[tuple[str, str], float | None]]


def correlation_report(
    instances: Sequence[Instance], annotations: Sequence[AnnotationRecord]
) -> CorrelationReport:
    instance_by_id = {inst.instance_id: inst for inst in instances}
    by_combination: dict[tuple[str, str], list[AnnotationRecord]] = defaultdict(list)
    for rec in annotations:
        inst = instance_by_id.get(rec.instance_id)
        if inst is None:
            raise ValueError(f"annotation references unknown instance {rec.instance_id!r}")
        by_combination[inst.combination].append(rec)
    pooled = correlation_matrix(instances, annotations)
    per_combination = {
        combination: correlation_matrix(instances, records)
        for combination, records in sorted(by_combination.items())
    }
    return CorrelationReport(pooled, per_combination)


# --------------------------------------------------------------------------
# filtering

def filter_instances(
    instances: Sequence[Instance],
    thresholds: Mapping[tuple[str, str], float],
    *,
    default: float | None = None,
) -> list[Instance]:
    """Keep instances whose similarity strictly exceeds their combination's
    threshold ("does not exceed" is filtered out), preserving input order."""
    kept: list[Instance] = []
    for inst in instances:
        threshold = thresholds.get(inst.combination, default)
        if threshold is None:
            raise ValueError(
                f"no threshold for combination {inst.combination} and no default given"
            )
        if inst.similarity > threshold:
            kept.append(inst)
    return kept


def combination_label(combination: tuple[str, str]) -> str:
    return f"{combination[0]}+{combination[1]}"


def parse_combination_label(label: str) -> tuple[str, str]:
    dsrc, sep, isrc = label.partition("+")
    if not sep or not dsrc or not isrc:
        raise ValueError(f"bad combination label {label!r}; expected '<dsrc>+<isrc>'")
    return (dsrc, isrc)


def report_as_dict(report: ThresholdReport) -> dict:
    """JSON form of a threshold report (the thresholds-file schema)."""
    combos = {}
    for combination, cal in sorted(report.combinations.items()):
        entry: dict = {
            "q1": cal.thresholds["q1"],
            "q2": cal.thresholds["q2"],
            "q3": cal.thresholds["q3"],
            "chosen": cal.chosen,
            "kept": cal.kept,
            "total": cal.total,
        }
        for question in QUESTIONS:
            entry[f"curve_{question}"] = [[s, y] for s, y in cal.curves[question]]
        combos[combination_label(combination)] = entry
    return {"combinations": combos, "seed": report.seed}


def thresholds_from_dict(data: Mapping) -> dict[tuple[str, str], float]:
    """Extract a combination->threshold map from either a full threshold
    report or a flat {"<dsrc>+<isrc>": float} mapping; uncalibrated
    combinations (chosen null) are omitted."""
    if "combinations" in data:
        items = {
            label: entry.get("chosen")
            for label, entry in data["combinations"].items()
        }
    else:
        items = dict(data)
    out: dict[tuple[str, str], float] = {}
    for label, value in items.items():
        if value is None:
            continue
        out[parse_combination_label(label)] = float(value)
    return out
