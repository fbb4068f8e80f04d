#!/usr/bin/env python3
"""Generate the bundled synthetic fixture corpus under fixtures/.

Everything is derived from one RNG seed: dialogue/caption text, sentence and
image embeddings (sentence vectors are noisy mixtures of a same-split anchor
image vector, so text-to-image similarities spread over a useful range), and
three synthetic annotators whose scores rise with similarity. Run from the
repository root; pair with oracle_counts.py to refresh the committed
expectations.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mmdial import builder, preprocess, simsearch
from mmdial.calibrate import AnnotationRecord, write_annotations
from mmdial.corpus import (
    Dialogue,
    ImageRecord,
    Turn,
    write_dialogues,
    write_embeddings_binary,
    write_embeddings_text,
    write_images,
)
from mmdial.stopwords import DEFAULT_STOPWORDS, stopword_tokens

DIM = 32

# canonical build flags for this fixture; tests and docs read these
PIPELINE_CONFIG = {"seed": 17, "topk": 5, "floor": 0.25}

SPLIT_TAGS = {"train": "tr", "valid": "va", "test": "te"}

DIALOGUE_SOURCES = {
    "daily": {"train": 48, "valid": 8, "test": 26},
    "persona": {"train": 36, "valid": 8, "test": 18},
}
IMAGE_SOURCES = {
    "coco": {"train": 72, "valid": 18, "test": 30},
    "flickr": {"train": 48, "valid": 12, "test": 20},
}

SUBJECTS = ("my brother", "the neighbor", "our coach", "aunt rosa", "the barista",
            "my roommate", "the painter", "grandpa", "the tour guide", "her colleague")
VERBS = ("photographed", "repaired", "carried", "decorated", "borrowed",
         "painted", "planted", "cooked", "sketched", "polished")
OBJECTS = ("bicycle", "kite", "guitar", "sailboat", "lantern", "telescope",
           "skateboard", "umbrella", "bouquet", "camera", "canoe", "banjo")
PLACES = ("harbor", "market", "rooftop", "meadow", "museum", "boardwalk",
          "garage", "orchard", "café", "stadium")
ADJECTIVES = ("bright", "rusty", "enormous", "tiny", "colorful", "antique",
              "crooked", "shiny", "wooden", "striped")

QUESTION_FORMS = (
    "Did {subject} really take the {object} to the {place}?",
    "Where did {subject} find that {adjective} {object}?",
    "Do you think the {object} by the {place} looks {adjective}?",
    "Have you seen the {adjective} {object} yet?",
)
STATEMENT_FORMS = (
    "{Subject} {verb} the {adjective} {object} near the {place} {tag}.",
    "{Subject} {verb} a {adjective} {object} at the {place} {tag}.",
    "Honestly the {object} at the {place} looked {adjective} {tag}.",
    "{Subject} just {verb} that {object} behind the {place} {tag}.",
)
CAPTION_FORMS = (
    "a {adjective} {object} near the {place}",
    "{subject} with a {adjective} {object}",
    "a {object} and a {object2} at the {place}",
)


def _statement(rng, tag: str) -> str:
    form = STATEMENT_FORMS[rng.integers(len(STATEMENT_FORMS))]
    subject = SUBJECTS[rng.integers(len(SUBJECTS))]
    return form.format(
        Subject=subject.capitalize(),
        verb=VERBS[rng.integers(len(VERBS))],
        adjective=ADJECTIVES[rng.integers(len(ADJECTIVES))],
        object=OBJECTS[rng.integers(len(OBJECTS))],
        place=PLACES[rng.integers(len(PLACES))],
        tag=tag,
    )


def _question(rng) -> str:
    form = QUESTION_FORMS[rng.integers(len(QUESTION_FORMS))]
    return form.format(
        subject=SUBJECTS[rng.integers(len(SUBJECTS))],
        adjective=ADJECTIVES[rng.integers(len(ADJECTIVES))],
        object=OBJECTS[rng.integers(len(OBJECTS))],
        place=PLACES[rng.integers(len(PLACES))],
    )


def build_dialogues(rng) -> dict[str, list[Dialogue]]:
    by_source: dict[str, list[Dialogue]] = {}
    for source, counts in DIALOGUE_SOURCES.items():
        dialogues = []
        for split, count in counts.items():
            for index in range(count):
                dialogue_id = f"{source[0]}{SPLIT_TAGS[split]}{index:03d}"
                n_turns = int(rng.integers(5, 10))
                texts = []
                for turn_index in range(n_turns):
                    roll = rng.random()
                    if roll < 0.25:
                        texts.append(_question(rng))
                    elif roll < 0.28:
                        texts.append("It is.")  # stop-word-only turn
                    else:
                        texts.append(_statement(rng, f"q{dialogue_id}x{turn_index}"))
                turns = tuple(Turn(i % 2, t) for i, t in enumerate(texts))
                dialogues.append(Dialogue(dialogue_id, source, split, turns))
        by_source[source] = dialogues
    return by_source


def build_images(rng) -> dict[str, list[ImageRecord]]:
    by_source: dict[str, list[ImageRecord]] = {}
    for source, counts in IMAGE_SOURCES.items():
        images = []
        for split, count in counts.items():
            for index in range(count):
                image_id = f"{source[0]}{SPLIT_TAGS[split]}{index:03d}"
                form = CAPTION_FORMS[rng.integers(len(CAPTION_FORMS))]
                caption = form.format(
                    subject=SUBJECTS[rng.integers(len(SUBJECTS))],
                    adjective=ADJECTIVES[rng.integers(len(ADJECTIVES))],
                    object=OBJECTS[rng.integers(len(OBJECTS))],
                    object2=OBJECTS[rng.integers(len(OBJECTS))],
                    place=PLACES[rng.integers(len(PLACES))],
                )
                images.append(ImageRecord(image_id, source, split, caption))
        by_source[source] = images
    return by_source


def build_embeddings(rng, dialogues, images):
    image_vectors = {}
    for img in images:
        vec = rng.normal(size=DIM)
        image_vectors[img.image_id] = vec / np.linalg.norm(vec)

    images_by_split: dict[str, list[str]] = {}
    for img in images:
        images_by_split.setdefault(img.split, []).append(img.image_id)

    stoplist = stopword_tokens(DEFAULT_STOPWORDS)
    sentence_vectors = []
    for dialogue in dialogues:
        for cand in preprocess.extract_candidates(dialogue, stoplist):
            pool = images_by_split[dialogue.split]
            anchor = image_vectors[pool[rng.integers(len(pool))]]
            # noise scale controls how far the sentence drifts from its anchor;
            # a small share drifts so far the match can drop below the floor
            beta = rng.uniform(3.5, 6.0) if rng.random() < 0.07 else rng.uniform(0.3, 1.6)
            noise = rng.normal(size=DIM)
            noise /= np.linalg.norm(noise)
            vec = anchor + beta * noise
            sentence_vectors.append((cand.key, vec / np.linalg.norm(vec)))
    return sentence_vectors, [(img.image_id, image_vectors[img.image_id]) for img in images]


def build_annotations(rng, instances) -> list[AnnotationRecord]:
    """Three annotators per instance; scores track similarity with noise/bias."""
    records = []
    biases = {"a1": -0.25, "a2": 0.0, "a3": 0.25}
    for inst in instances:
        sim = builder.serialize_similarity(inst.similarity)
        u = min(max((sim - 0.35) / 0.45, 0.0), 1.0)
        for annotator, bias in biases.items():
            q1 = int(np.clip(round(1 + 2 * u + bias + rng.normal(0, 0.15)), 1, 3))
            q2 = int(np.clip(round(1 + 2 * u ** 1.2 + bias + rng.normal(0, 0.15)), 1, 3))
            q3 = int(np.clip(round(1 + 4 * u + bias + rng.normal(0, 0.25)), 1, 5))
            q4 = None if rng.random() < 0.1 else int(rng.integers(1, 5))
            records.append(AnnotationRecord(inst.instance_id, annotator, q1, q2, q3, q4))
    return records


def run_reference_pipeline(dialogues, images, sentence_vectors, image_vectors):
    """The canonical fixture build, used only to attach annotations to instances."""
    from mmdial.corpus import EmbeddingStore

    stoplist = stopword_tokens(DEFAULT_STOPWORDS)
    candidates = []
    for dialogue in dialogues:
        candidates.extend(preprocess.extract_candidates(dialogue, stoplist))
    sentence_store = EmbeddingStore.from_vectors(sentence_vectors)
    image_store = EmbeddingStore.from_vectors(image_vectors)
    split_of = {d.dialogue_id: d.split for d in dialogues}
    ids_by_split: dict[str, list[str]] = {}
    for img in images:
        ids_by_split.setdefault(img.split, []).append(img.image_id)
    results = {}
    for split in ("train", "valid", "test"):
        split_candidates = [c for c in candidates if split_of[c.dialogue_id] == split]
        store = image_store.subset(ids_by_split[split])
        queries = [(c.key, sentence_store.vector(c.key)) for c in split_candidates]
        for res in simsearch.topk_batch(queries, store, PIPELINE_CONFIG["topk"],
                                        PIPELINE_CONFIG["floor"]):
            results[res.query_id] = res
    return builder.build_instances(dialogues, candidates, results, images)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path,
                        default=Path(__file__).resolve().parent.parent / "fixtures")
    parser.add_argument("--seed", type=int, default=20260810)
    args = parser.parse_args()
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    dialogues_by_source = build_dialogues(rng)
    images_by_source = build_images(rng)
    all_dialogues = [d for ds in dialogues_by_source.values() for d in ds]
    all_images = [i for im in images_by_source.values() for i in im]

    sentence_vectors, image_vectors = build_embeddings(rng, all_dialogues, all_images)

    for source, dialogues in dialogues_by_source.items():
        write_dialogues(out / f"dialogues_{source}.jsonl", dialogues)
    for source, images in images_by_source.items():
        write_images(out / f"images_{source}.jsonl", images)
    write_embeddings_text(out / "embeddings_sentences.jsonl", sentence_vectors)
    write_embeddings_binary(out / "embeddings_images.emb", image_vectors)
    (out / "pipeline_config.json").write_text(
        json.dumps(PIPELINE_CONFIG, sort_keys=True) + "\n", encoding="utf-8")

    instances = run_reference_pipeline(all_dialogues, all_images,
                                       sentence_vectors, image_vectors)
    annotations = build_annotations(rng, instances)
    write_annotations(out / "annotations.csv", annotations)

    print(f"dialogues: {len(all_dialogues)}  images: {len(all_images)}  "
          f"candidates: {len(sentence_vectors)}  instances: {len(instances)}  "
          f"annotations: {len(annotations)}")
    print(f"fixture written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
