#!/usr/bin/env python3
"""Recompute the fixture's expected pipeline outputs independently.

This script re-derives candidate selection, similarity search, instance
construction, calibration, and filtering from the fixture files using its
own code (manual tokenizer, einsum similarities, sort-based top-k, plain
sum/len aggregation) rather than the package's, and writes the counts the
acceptance suite compares against to fixtures/oracle_counts.json.

Shared with the implementation by contract, not by code: the stop-word list
(data), numpy's seeded Generator.choice for segment sampling, and float32
rounding of serialized similarities.
"""

from __future__ import annotations

import csv
import json
import struct
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mmdial.stopwords import _WORDS  # data only; all logic below is local

SPLITS = ("train", "valid", "test")


def tokenize(text: str) -> list[str]:
    tokens: list[str] = []
    current: list[str] = []
    for ch in text.lower():
        if ch.isalnum():
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


ACTIVE_STOPWORDS = {tok for word in _WORDS for tok in tokenize(word)}


def read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()]


def read_embeddings(path: Path) -> dict[str, np.ndarray]:
    data = path.read_bytes()
    vectors: dict[str, np.ndarray] = {}
    if data[:4] == b"EMB1":
        (dim,) = struct.unpack_from("<I", data, 4)
        offset = 8
        while offset < len(data):
            (id_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            eid = data[offset:offset + id_len].decode("utf-8")
            offset += id_len
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
            offset += 4 * dim
            vectors[eid] = vec.astype(np.float64)
    else:
        for rec in read_jsonl(path):
            vectors[rec["id"]] = np.asarray(rec["vector"], dtype=np.float64)
    for eid, vec in vectors.items():
        vectors[eid] = vec / np.sqrt(float(np.sum(vec * vec)))
    return vectors


def extract_candidates(dialogue: dict) -> list[tuple[str, int]]:
    out = []
    for index, turn in enumerate(dialogue["turns"]):
        if index == 0:
            continue
        if turn["text"].strip().endswith("?"):
            continue
        tokens = [t for t in tokenize(turn["text"]) if t not in ACTIVE_STOPWORDS]
        if not tokens:
            continue
        out.append((dialogue["dialogue_id"], index))
    return out


def f32(value: float) -> float:
    return float(np.float32(value))


def interpolate(curve: list[tuple[float, float]], target: float) -> float | None:
    crossings = []
    if curve[0][1] >= target:
        crossings.append(curve[0][0])
    for (s0, y0), (s1, y1) in zip(curve, curve[1:]):
        if y0 < target <= y1:
            crossings.append((target - y0) * (s1 - s0) / (y1 - y0) + s0)
    return max(crossings) if crossings else None


def calibrate_combination(group, annotations, seed, per_segment=30, num_segments=10):
    """group: list of (instance_id, similarity). Returns (thresholds, chosen, kept)."""
    ordered = sorted(group, key=lambda item: (item[1], item[0]))
    base, remainder = divmod(len(ordered), num_segments)
    sizes = [base + 1] * remainder + [base] * (num_segments - remainder)
    rng = np.random.default_rng(seed)
    curves: dict[str, list[tuple[float, float]]] = {"q1": [], "q2": [], "q3": []}
    start = 0
    for size in sizes:
        block = ordered[start:start + size]
        start += size
        take = min(per_segment, len(block))
        picked = np.sort(rng.choice(len(block), size=take, replace=False))
        chosen_ids = [block[i][0] for i in picked]
        annotated = [iid for iid in chosen_ids if iid in annotations]
        if not annotated:
            continue
        sim_of = dict(block)
        mean_sim = sum(sim_of[iid] for iid in annotated) / len(annotated)
        for question in ("q1", "q2", "q3"):
            scores = [score for iid in annotated for score in annotations[iid][question]]
            curves[question].append((mean_sim, sum(scores) / len(scores)))
    targets = {"q1": 2.0, "q2": 2.0, "q3": 3.0}
    thresholds = {}
    for question, curve in curves.items():
        thresholds[question] = (interpolate(curve, targets[question])
                                if len(curve) >= 2 else None)
    available = [t for t in thresholds.values() if t is not None]
    chosen = max(available) if available else None
    if chosen is None:
        kept = len(group)
    else:
        kept = sum(1 for _, sim in group if sim > chosen)
    return thresholds, chosen, kept


def main() -> int:
    root = Path(__file__).resolve().parent.parent
    fixtures = root / "fixtures"
    config = json.loads((fixtures / "pipeline_config.json").read_text(encoding="utf-8"))
    seed, topk, floor = config["seed"], config["topk"], config["floor"]

    dialogue_sources = sorted(
        p.stem.removeprefix("dialogues_") for p in fixtures.glob("dialogues_*.jsonl"))
    image_sources = sorted(
        p.stem.removeprefix("images_") for p in fixtures.glob("images_*.jsonl"))

    dialogues: list[dict] = []
    dialogue_counts = {}
    for source in dialogue_sources:
        records = read_jsonl(fixtures / f"dialogues_{source}.jsonl")
        dialogue_counts[source] = {
            "dialogues": len(records),
            "turns": sum(len(r["turns"]) for r in records),
        }
        dialogues.extend(records)

    images: list[dict] = []
    image_counts = {}
    for source in image_sources:
        records = read_jsonl(fixtures / f"images_{source}.jsonl")
        image_counts[source] = len(records)
        images.extend(records)

    sentence_vectors = read_embeddings(fixtures / "embeddings_sentences.jsonl")
    image_vectors = read_embeddings(fixtures / "embeddings_images.emb")

    candidates: list[tuple[str, int]] = []
    split_of = {}
    for dialogue in dialogues:
        split_of[dialogue["dialogue_id"]] = dialogue["split"]
        candidates.extend(extract_candidates(dialogue))

    image_source_of = {img["image_id"]: img["source"] for img in images}
    ids_by_split: dict[str, list[str]] = {s: [] for s in SPLITS}
    for img in images:
        ids_by_split[img["split"]].append(img["image_id"])

    source_of_dialogue = {d["dialogue_id"]: d["source"] for d in dialogues}
    instances: list[tuple[str, str, str, tuple[str, str], float]] = []
    for did, index in candidates:
        split = split_of[did]
        key = f"{did}#{index}"
        query = sentence_vectors[key]
        pool = ids_by_split[split]
        matrix = np.stack([image_vectors[iid] for iid in pool])
        sims = np.einsum("ij,j->i", matrix, query)
        scored = [(iid, float(s)) for iid, s in zip(pool, sims) if s >= floor]
        scored.sort(key=lambda item: (-item[1], item[0]))
        for iid, sim in scored[:topk]:
            combo = (source_of_dialogue[did], image_source_of[iid])
            instances.append((f"{did}#{index}#{iid}", did, split, combo, f32(sim)))

    by_split = {s: sum(1 for inst in instances if inst[2] == s) for s in SPLITS}

    annotations: dict[str, dict[str, list[int]]] = {}
    with open(fixtures / "annotations.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            entry = annotations.setdefault(
                row["instance_id"], {"q1": [], "q2": [], "q3": []})
            for question in ("q1", "q2", "q3"):
                entry[question].append(int(row[question]))

    combos = sorted({inst[3] for inst in instances})
    thresholds_out = {}
    kept_by_combination = {}
    kept_instances = []
    for combo in combos:
        group = [(inst[0], inst[4]) for inst in instances if inst[3] == combo]
        thresholds, chosen, kept = calibrate_combination(group, annotations, seed)
        label = f"{combo[0]}+{combo[1]}"
        thresholds_out[label] = {"chosen": chosen, **thresholds}
        kept_by_combination[label] = kept
        if chosen is None:
            kept_instances.extend(inst for inst in instances if inst[3] == combo)
        else:
            kept_instances.extend(
                inst for inst in instances if inst[3] == combo and inst[4] > chosen)

    kept_by_split = {s: sum(1 for inst in kept_instances if inst[2] == s) for s in SPLITS}

    # eval runs on the filtered dataset's test split; for the next task,
    # targets on a dialogue's final turn have no response and drop out
    kept_test = [inst for inst in kept_instances if inst[2] == "test"]
    turn_count = {d["dialogue_id"]: len(d["turns"]) for d in dialogues}
    next_eligible = sum(
        1 for inst in kept_test
        if int(inst[0].split("#")[1]) + 1 < turn_count[inst[1]]
    )

    payload = {
        "pipeline_config": config,
        "dialogues": dialogue_counts,
        "images": image_counts,
        "candidates": len(candidates),
        "instances": len(instances),
        "instances_by_split": by_split,
        "thresholds": thresholds_out,
        "kept_by_combination": kept_by_combination,
        "kept_total": len(kept_instances),
        "kept_by_split": kept_by_split,
        "eval_n": {"current": len(kept_test), "next": next_eligible},
    }
    out = fixtures / "oracle_counts.json"
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps({k: payload[k] for k in ("candidates", "instances", "kept_total")}))
    print(f"written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
