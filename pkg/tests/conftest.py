from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from mmdial.corpus import Dialogue, ImageRecord, Turn

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def make_dialogue(dialogue_id="d1", source="daily", split="train", texts=None):
    texts = texts if texts is not None else ["Hi there.", "Hello!", "Nice day today.", "Sure is."]
    turns = tuple(Turn(i % 2, t) for i, t in enumerate(texts))
    return Dialogue(dialogue_id, source, split, turns)


def make_image(image_id="img1", source="coco", split="train", caption="a dog in a park"):
    return ImageRecord(image_id, source, split, caption)


def unit_vectors(n, d, seed):
    rng = np.random.default_rng(seed)
    mat = rng.normal(size=(n, d))
    return mat / np.linalg.norm(mat, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
