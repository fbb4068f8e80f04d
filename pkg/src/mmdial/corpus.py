"""Corpus ingestion: dialogue, image-caption, and embedding files.

Defines the canonical on-disk formats (line-delimited JSON for dialogues,
images, and text-form embeddings; a packed binary form for embeddings) and
the validated in-memory stores the rest of the pipeline works on. Everything
loaded here is immutable afterwards and safe to share across threads.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

SPLITS = ("train", "valid", "test")

EMBEDDING_MAGIC = b"EMB1"

# |norm - 1| tolerance promised for normalized stores.
UNIT_NORM_TOL = 1e-6


class LoadError(ValueError):
    """An input file failed to parse or validate; message carries file context."""


def _check_id(value: str, what: str) -> str:
    if not isinstance(value, str) or not value:
        raise ValueError(f"{what} must be a non-empty string, got {value!r}")
    if "#" in value:
        # ids are composed into "dialogue_id#turn_index#image_id" keys
        raise ValueError(f"{what} {value!r} must not contain '#'")
    return value


def _check_split(value: str) -> str:
    if value not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {value!r}")
    return value


@dataclass(frozen=True)
class Turn:
    speaker: int
    text: str

    def __post_init__(self) -> None:
        if not isinstance(self.speaker, int) or self.speaker < 0:
            raise ValueError(f"speaker index must be a non-negative integer, got {self.speaker!r}")
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("turn text is empty")


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    source: str
    split: str
    turns: tuple[Turn, ...]

    def __post_init__(self) -> None:
        _check_id(self.dialogue_id, "dialogue_id")
        if not self.source:
            raise ValueError("dialogue source must be non-empty")
        _check_split(self.split)
        if len(self.turns) < 2:
            raise ValueError(
                f"dialogue {self.dialogue_id!r} has {len(self.turns)} turn(s); need at least 2"
            )


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    source: str
    split: str
    caption: str

    def __post_init__(self) -> None:
        _check_id(self.image_id, "image_id")
        if not self.source:
            raise ValueError("image source must be non-empty")
        _check_split(self.split)
        if not isinstance(self.caption, str) or not self.caption.strip():
            raise ValueError(f"image {self.image_id!r} has an empty caption")


@dataclass(frozen=True)
class EmbeddingStore:
    """Id-addressed dense vectors held as one float64 matrix.

    Rows are unit-norm when ``normalized`` is true, which is what every
    loader produces; similarity search requires it.
    """

    dimension: int
    ids: tuple[str, ...]
    matrix: np.ndarray
    normalized: bool
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.dimension <= 0:
            raise ValueError(f"embedding dimension must be positive, got {self.dimension}")
        if self.matrix.shape != (len(self.ids), self.dimension):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{len(self.ids)} ids x dimension {self.dimension}"
            )
        object.__setattr__(self, "_index", {eid: row for row, eid in enumerate(self.ids)})

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, embedding_id: str) -> bool:
        return embedding_id in self._index

    def vector(self, embedding_id: str) -> np.ndarray:
        try:
            return self.matrix[self._index[embedding_id]]
        except KeyError:
            raise KeyError(f"unknown embedding id {embedding_id!r}") from None

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for embedding_id in self.ids:
            yield embedding_id, self.matrix[self._index[embedding_id]]

    def subset(self, ids: Iterable[str]) -> "EmbeddingStore":
        """Restrict the store to ``ids``, keeping this store's row order."""
        wanted = set(ids)
        missing = wanted - self._index.keys()
        if missing:
            raise KeyError(f"unknown embedding ids: {sorted(missing)[:5]}")
        keep = [eid for eid in self.ids if eid in wanted]
        rows = np.ascontiguousarray(self.matrix[[self._index[eid] for eid in keep]])
        return EmbeddingStore(self.dimension, tuple(keep), rows, self.normalized)

    @classmethod
    def from_vectors(
        cls,
        pairs: Iterable[tuple[str, Sequence[float]]],
        *,
        normalize: bool = True,
        expect_dim: int | None = None,
    ) -> "EmbeddingStore":
        ids: list[str] = []
        rows: list[np.ndarray] = []
        dim = expect_dim
        seen: set[str] = set()
        for eid, vec in pairs:
            # embedding ids may be composite keys ("dialogue#turn"), so unlike
            # dialogue/image ids they only need to be non-empty
            if not isinstance(eid, str) or not eid:
                raise ValueError(f"embedding id must be a non-empty string, got {eid!r}")
            if eid in seen:
                raise ValueError(f"duplicate embedding id {eid!r}")
            seen.add(eid)
            row = np.asarray(vec, dtype=np.float64)
            if row.ndim != 1:
                raise ValueError(f"embedding {eid!r} is not a flat vector")
            if dim is None:
                dim = int(row.shape[0])
            if row.shape[0] != dim:
                raise ValueError(
                    f"embedding {eid!r} has dimension {row.shape[0]}, expected {dim}"
                )
            if not np.all(np.isfinite(row)):
                raise ValueError(f"embedding {eid!r} contains a non-finite component")
            if normalize:
                norm = float(np.linalg.norm(row))
                if norm == 0.0:
                    raise ValueError(f"embedding {eid!r} has zero norm")
                row = row / norm
            ids.append(eid)
            rows.append(row)
        if dim is None or dim <= 0:
            raise ValueError("cannot build an embedding store without a dimension")
        matrix = np.vstack(rows) if rows else np.empty((0, dim), dtype=np.float64)
        return cls(dim, tuple(ids), np.ascontiguousarray(matrix), normalize)


# --------------------------------------------------------------------------
# line-delimited JSON files

def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    # utf-8-sig strips a leading byte-order mark if present
    with open(path, encoding="utf-8-sig") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoadError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            if not isinstance(record, dict):
                raise LoadError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, record


def json_line(obj) -> str:
    """Canonical one-line JSON used by every writer (keeps reruns byte-identical)."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def load_dialogues(path, source: str | None = None, split: str | None = None) -> list[Dialogue]:
    """Load a line-delimited dialogue file.

    ``source`` and ``split`` fill in records that do not carry their own;
    record fields win when present, so written files round-trip exactly.
    """
    path = Path(path)
    dialogues: list[Dialogue] = []
    seen: set[str] = set()
    for lineno, rec in _iter_jsonl(path):
        try:
            did = rec["dialogue_id"]
            rec_source = rec.get("source", source)
            rec_split = rec.get("split", split)
            if rec_source is None:
                raise ValueError("record has no 'source' and no default was given")
            if rec_split is None:
                raise ValueError("record has no 'split' and no default was given")
            turns = tuple(Turn(t["speaker"], t["text"]) for t in rec["turns"])
            dialogue = Dialogue(did, rec_source, rec_split, turns)
        except (KeyError, TypeError, ValueError) as exc:
            label = rec.get("dialogue_id", "<missing dialogue_id>")
            raise LoadError(f"{path}:{lineno}: dialogue {label!r}: {exc}") from None
        if dialogue.dialogue_id in seen:
            raise LoadError(f"{path}:{lineno}: duplicate dialogue_id {dialogue.dialogue_id!r}")
        seen.add(dialogue.dialogue_id)
        dialogues.append(dialogue)
    return dialogues


def write_dialogues(path, dialogues: Iterable[Dialogue]) -> None:
    with atomic_write(path) as fh:
        for d in dialogues:
            fh.write(json_line({
                "dialogue_id": d.dialogue_id,
                "source": d.source,
                "split": d.split,
                "turns": [{"speaker": t.speaker, "text": t.text} for t in d.turns],
            }) + "\n")


def load_images(path, source: str | None = None, split: str | None = None) -> list[ImageRecord]:
    """Load a line-delimited image caption file (same defaulting as dialogues)."""
    path = Path(path)
    images: list[ImageRecord] = []
    seen: set[str] = set()
    for lineno, rec in _iter_jsonl(path):
        try:
            iid = rec["image_id"]
            rec_source = rec.get("source", source)
            rec_split = rec.get("split", split)
            if rec_source is None:
                raise ValueError("record has no 'source' and no default was given")
            if rec_split is None:
                raise ValueError("record has no 'split' and no default was given")
            image = ImageRecord(iid, rec_source, rec_split, rec["caption"])
        except (KeyError, TypeError, ValueError) as exc:
            label = rec.get("image_id", "<missing image_id>")
            raise LoadError(f"{path}:{lineno}: image {label!r}: {exc}") from None
        if image.image_id in seen:
            raise LoadError(f"{path}:{lineno}: duplicate image_id {image.image_id!r}")
        seen.add(image.image_id)
        images.append(image)
    return images


def write_images(path, images: Iterable[ImageRecord]) -> None:
    with atomic_write(path) as fh:
        for img in images:
            fh.write(json_line({
                "image_id": img.image_id,
                "source": img.source,
                "split": img.split,
                "caption": img.caption,
            }) + "\n")


# --------------------------------------------------------------------------
# embedding files
#
# Text form: one {"id": str, "vector": [float, ...]} object per line.
# Packed binary form: magic b"EMB1", u32-le dimension, then repeated
# (u16-le id byte length, id bytes, dimension * f32-le). No padding.

def read_embedding_records(path) -> list[tuple[str, np.ndarray]]:
    """Read raw (id, vector) records without normalizing; detects form by magic."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(EMBEDDING_MAGIC))
    if magic == EMBEDDING_MAGIC:
        return _read_binary_embeddings(path)
    return _read_text_embeddings(path)


def _read_text_embeddings(path: Path) -> list[tuple[str, np.ndarray]]:
    records: list[tuple[str, np.ndarray]] = []
    for lineno, rec in _iter_jsonl(path):
        try:
            eid = rec["id"]
            vec = np.asarray(rec["vector"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise LoadError(f"{path}:{lineno}: bad embedding record: {exc}") from None
        records.append((eid, vec))
    return records


def _read_binary_embeddings(path: Path) -> list[tuple[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != EMBEDDING_MAGIC:
        raise LoadError(f"{path}: missing {EMBEDDING_MAGIC!r} magic")
    if len(data) < 8:
        raise LoadError(f"{path}: truncated header")
    (dim,) = struct.unpack_from("<I", data, 4)
    if dim == 0:
        raise LoadError(f"{path}: dimension must be positive")
    records: list[tuple[str, np.ndarray]] = []
    offset = 8
    vec_bytes = 4 * dim
    while offset < len(data):
        if offset + 2 > len(data):
            raise LoadError(f"{path}: truncated record header at byte {offset}")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if id_len == 0:
            raise LoadError(f"{path}: empty embedding id at byte {offset}")
        if offset + id_len + vec_bytes > len(data):
            raise LoadError(f"{path}: truncated record at byte {offset}")
        eid = data[offset:offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += vec_bytes
        records.append((eid, vec))
    return records


def write_embeddings_text(path, records: Iterable[tuple[str, Sequence[float]]]) -> None:
    with atomic_write(path) as fh:
        for eid, vec in records:
            fh.write(json_line({"id": eid, "vector": [float(x) for x in np.asarray(vec)]}) + "\n")


def write_embeddings_binary(path, records: Sequence[tuple[str, Sequence[float]]]) -> None:
    """Write the packed form; vectors are stored as little-endian float32, bit-exact."""
    records = list(records)
    if not records:
        raise ValueError("cannot write an empty binary embedding file (dimension unknown)")
    dim = len(np.asarray(records[0][1]).ravel())
    with atomic_write(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<I", dim))
        for eid, vec in records:
            row = np.asarray(vec, dtype="<f4").ravel()
            if row.shape[0] != dim:
                raise ValueError(f"embedding {eid!r} has dimension {row.shape[0]}, expected {dim}")
            id_bytes = eid.encode("utf-8")
            if not 0 < len(id_bytes) <= 0xFFFF:
                raise ValueError(f"embedding id {eid!r} does not fit the format")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(row.tobytes())


def load_embeddings(path, expect_dim: int | None = None) -> EmbeddingStore:
    """Load an embedding file into a store, L2-normalizing every vector.

    Similarity downstream is cosine, i.e. the dot product of these unit
    vectors. Zero-norm vectors are a hard error so id sets stay in sync
    with their caption files.
    """
    path = Path(path)
    records = read_embedding_records(path)
    try:
        return EmbeddingStore.from_vectors(records, normalize=True, expect_dim=expect_dim)
    except ValueError as exc:
        raise LoadError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------

@contextmanager
def atomic_write(path, mode: str = "w"):
    """Write to a temp file in the target directory, then rename into place.

    Failures never leave a partial file at ``path``.
    """
    path = Path(path)
    if mode not in ("w", "wb"):
        raise ValueError(f"unsupported mode {mode!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        kwargs = {} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
