"""mmdial: build image-mixed dialogue datasets from text corpora and embeddings.

The pipeline runs in stages: ingest corpora (:mod:`mmdial.corpus`), pick
replaceable sentences (:mod:`mmdial.preprocess`), match them to images by
cosine similarity (:mod:`mmdial.simsearch`), expand matches into one-image
dialogue instances (:mod:`mmdial.builder`), calibrate similarity thresholds
from human annotation scores (:mod:`mmdial.calibrate`), and evaluate with a
tf-idf retrieval baseline (:mod:`mmdial.evalharness`). ``mmdial.cli`` wires
the stages into the ``mmdial`` command; ``mmdial.service`` hosts the
annotation HTTP API.
"""

__version__ = "0.1.0"
