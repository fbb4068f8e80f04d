"""Reference constants from the original full-scale corpus build.

The full-scale run used three dialogue corpora (daily, persona, empathetic)
against two caption corpora (coco, flickr). Its calibrated thresholds,
dataset sizes, and baseline metrics are bundled here as configuration
defaults and regression context; they are not reproducible from the
desk-scale fixtures shipped with this repository.
"""

from __future__ import annotations

# Calibrated similarity threshold per (dialogue source, image source).
REFERENCE_THRESHOLDS: dict[tuple[str, str], float] = {
    ("persona", "coco"): 0.546,
    ("persona", "flickr"): 0.509,
    ("daily", "coco"): 0.555,
    ("daily", "flickr"): 0.619,
    ("empathetic", "coco"): 0.623,
    ("empathetic", "flickr"): 0.516,
}

# Instances surviving those thresholds, per combination and split.
REFERENCE_FILTERED_COUNTS: dict[tuple[str, str], dict[str, int]] = {
    ("persona", "coco"): {"train": 11606, "valid": 411, "test": 1136},
    ("persona", "flickr"): {"train": 19148, "valid": 1654, "test": 1014},
    ("daily", "coco"): {"train": 3418, "valid": 47, "test": 319},
    ("daily", "flickr"): {"train": 141, "valid": 6, "test": 5},
    ("empathetic", "coco"): {"train": 245, "valid": 2, "test": 11},
    ("empathetic", "flickr"): {"train": 5398, "valid": 281, "test": 188},
}

REFERENCE_TOTAL_COUNTS: dict[str, int] = {"train": 39956, "valid": 2401, "test": 2673}

# Pooled Spearman rho between text-to-image similarity and question scores.
REFERENCE_SPEARMAN: dict[tuple[str, str], float] = {
    ("similarity", "q1"): 0.5893,
    ("similarity", "q2"): 0.4422,
    ("similarity", "q3"): 0.4334,
    ("q1", "q2"): 0.7103,
    ("q1", "q3"): 0.6646,
    ("q2", "q3"): 0.7570,
}

# tf-idf baseline on the full-scale test split (R@k/100 reported x100).
REFERENCE_IR_BASELINE: dict[str, dict[str, float]] = {
    "current": {"r_at_1": 21.62, "r_at_5": 49.49, "mean_rank": 30.04},
    "next": {"r_at_1": 8.13, "r_at_5": 21.07, "mean_rank": 29.41},
}

# Source corpus sizes (dialogues or images per split).
REFERENCE_SOURCE_SIZES: dict[str, dict[str, int]] = {
    "daily": {"train": 11118, "valid": 1000, "test": 1000},
    "persona": {"train": 8938, "valid": 999, "test": 967},
    "empathetic": {"train": 17792, "valid": 2758, "test": 2539},
    "coco": {"train": 113287, "valid": 5000, "test": 5000},
    "flickr": {"train": 28000, "valid": 1000, "test": 1000},
}

# Fraction of source sentences excluded as questions in the full-scale run.
REFERENCE_QUESTION_EXCLUSION_RATE = 0.2508

# The four image-intent choices offered by annotation question q4.
Q4_INTENTS = (
    "answering the question",
    "expressing emotional reactions",
    "proposing a new topic",
    "giving additional explanations",
)
