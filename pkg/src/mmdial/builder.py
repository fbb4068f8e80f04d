"""Expand top-k matches into image-mixed dialogue instances and dataset stats.

Each instance replaces exactly one sentence with exactly one image; a
candidate with m qualifying matches yields m instances that share context,
target, and response and differ only in the image fields.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Dialogue, ImageRecord, LoadError, SPLITS, Turn, atomic_write, json_line
from .preprocess import CandidateSentence
from .simsearch import TopKResult


@dataclass(frozen=True)
class Instance:
    """One image-mixed dialogue: context turns, one substituted image, the
    replaced sentence, and the following response when one exists."""

    instance_id: str
    dialogue_id: str
    dialogue_source: str
    image_source: str
    split: str
    context_turns: tuple[Turn, ...]
    target_sentence: str
    image_id: str
    similarity: float
    next_sentence: str | None

    def __post_init__(self) -> None:
        if not self.context_turns:
            raise ValueError(f"instance {self.instance_id!r} has an empty context")

    @property
    def combination(self) -> tuple[str, str]:
        return (self.dialogue_source, self.image_source)


def candidate_key(dialogue_id: str, turn_index: int) -> str:
    return f"{dialogue_id}#{turn_index}"


def build_instances(
    dialogues: Iterable[Dialogue],
    candidates: Sequence[CandidateSentence],
    topk_results: Iterable[TopKResult] | Mapping[str, TopKResult],
    images: Iterable[ImageRecord],
) -> list[Instance]:
    """Emit one instance per (candidate, qualifying match) pair, in candidate order.

    A candidate without an entry in ``topk_results`` (or with an empty match
    list) contributes nothing.
    """
    dialogue_by_id: dict[str, Dialogue] = {}
    for d in dialogues:
        if d.dialogue_id in dialogue_by_id:
            raise ValueError(f"duplicate dialogue_id {d.dialogue_id!r} across sources")
        dialogue_by_id[d.dialogue_id] = d
    image_by_id: dict[str, ImageRecord] = {}
    for img in images:
        if img.image_id in image_by_id:
            raise ValueError(f"duplicate image_id {img.image_id!r} across sources")
        image_by_id[img.image_id] = img
    if isinstance(topk_results, Mapping):
        result_by_key = dict(topk_results)
    else:
        result_by_key = {res.query_id: res for res in topk_results}

    instances: list[Instance] = []
    seen_ids: set[str] = set()
    for cand in candidates:
        dialogue = dialogue_by_id.get(cand.dialogue_id)
        if dialogue is None:
            raise ValueError(f"candidate references unknown dialogue {cand.dialogue_id!r}")
        result = result_by_key.get(cand.key)
        if result is None:
            continue
        turns = dialogue.turns
        next_sentence = turns[cand.turn_index + 1].text if cand.turn_index + 1 < len(turns) else None
        for match in result.matches:
            image = image_by_id.get(match.image_id)
            if image is None:
                raise ValueError(f"match references unknown image {match.image_id!r}")
            instance_id = f"{cand.dialogue_id}#{cand.turn_index}#{match.image_id}"
            if instance_id in seen_ids:
                raise ValueError(f"duplicate instance_id {instance_id!r}")
            seen_ids.add(instance_id)
            instances.append(Instance(
                instance_id=instance_id,
                dialogue_id=cand.dialogue_id,
                dialogue_source=dialogue.source,
                image_source=image.source,
                split=dialogue.split,
                context_turns=turns[:cand.turn_index],
                target_sentence=turns[cand.turn_index].text,
                image_id=match.image_id,
                similarity=match.similarity,
                next_sentence=next_sentence,
            ))
    return instances


# --------------------------------------------------------------------------
# instance file

def serialize_similarity(value: float) -> float:
    # similarities are rounded to float32 on disk; comparisons stay float64
    return float(np.float32(value))


def write_instances(path, instances: Iterable[Instance]) -> None:
    with atomic_write(path) as fh:
        for inst in instances:
            fh.write(json_line({
                "instance_id": inst.instance_id,
                "dialogue_id": inst.dialogue_id,
                "dialogue_source": inst.dialogue_source,
                "image_source": inst.image_source,
                "split": inst.split,
                "context": [{"speaker": t.speaker, "text": t.text} for t in inst.context_turns],
                "target": inst.target_sentence,
                "image_id": inst.image_id,
                "similarity": serialize_similarity(inst.similarity),
                "next": inst.next_sentence,
            }) + "\n")


def load_instances(path) -> list[Instance]:
    path = Path(path)
    instances: list[Instance] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8-sig") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                instance = Instance(
                    instance_id=rec["instance_id"],
                    dialogue_id=rec["dialogue_id"],
                    dialogue_source=rec["dialogue_source"],
                    image_source=rec["image_source"],
                    split=rec["split"],
                    context_turns=tuple(Turn(t["speaker"], t["text"]) for t in rec["context"]),
                    target_sentence=rec["target"],
                    image_id=rec["image_id"],
                    similarity=float(rec["similarity"]),
                    next_sentence=rec["next"],
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise LoadError(f"{path}:{lineno}: bad instance record: {exc}") from None
            if instance.instance_id in seen:
                raise LoadError(f"{path}:{lineno}: duplicate instance_id {instance.instance_id!r}")
            seen.add(instance.instance_id)
            instances.append(instance)
    return instances


# --------------------------------------------------------------------------
# dataset statistics

@dataclass(frozen=True)
class SplitStats:
    instances: int
    avg_dialogue_turns: float
    avg_sentence_chars: float
    unique_images: int
    unique_dialogues: int
    unique_targets: int
    avg_images_per_dialogue: float
    avg_targets_per_dialogue: float


@dataclass(frozen=True)
class DatasetStats:
    splits: dict[str, SplitStats]

    def as_dict(self) -> dict:
        return {split: vars(stats).copy() for split, stats in self.splits.items()}


_EMPTY = SplitStats(0, 0.0, 0.0, 0, 0, 0, 0.0, 0.0)


def compute_stats(instances: Sequence[Instance], dialogues: Iterable[Dialogue]) -> DatasetStats:
    """Per-split statistics of an instance set.

    Turn-count and sentence-length averages are taken over each split's
    unique dialogues (every dialogue counted once, using its full turn
    list); the per-dialogue averages divide distinct (dialogue, image) and
    (dialogue, target) pairs by the number of unique dialogues.
    """
    dialogue_by_id = {d.dialogue_id: d for d in dialogues}
    by_split: dict[str, list[Instance]] = defaultdict(list)
    for inst in instances:
        by_split[inst.split].append(inst)

    splits: dict[str, SplitStats] = {}
    for split in SPLITS:
        group = by_split.get(split, [])
        if not group:
            splits[split] = _EMPTY
            continue
        dialogue_ids = sorted({inst.dialogue_id for inst in group})
        missing = [did for did in dialogue_ids if did not in dialogue_by_id]
        if missing:
            raise ValueError(f"instances reference unknown dialogues: {missing[:5]}")
        turn_counts = [len(dialogue_by_id[did].turns) for did in dialogue_ids]
        sentence_lengths = [
            len(turn.text) for did in dialogue_ids for turn in dialogue_by_id[did].turns
        ]
        image_pairs = {(inst.dialogue_id, inst.image_id) for inst in group}
        # "dialogue_id#turn_index", i.e. a distinct target position
        target_positions = {inst.instance_id.rsplit("#", 1)[0] for inst in group}
        splits[split] = SplitStats(
            instances=len(group),
            avg_dialogue_turns=sum(turn_counts) / len(dialogue_ids),
            avg_sentence_chars=sum(sentence_lengths) / len(sentence_lengths),
            unique_images=len({inst.image_id for inst in group}),
            unique_dialogues=len(dialogue_ids),
            unique_targets=len(target_positions),
            avg_images_per_dialogue=len(image_pairs) / len(dialogue_ids),
            avg_targets_per_dialogue=len(target_positions) / len(dialogue_ids),
        )
    return DatasetStats(splits)
