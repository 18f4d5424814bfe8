"""Binary containers for image embeddings and text-class heads.

Wire format (shared with the out-of-process extractor, so everything is
explicit little-endian):

    magic     5 bytes  ("STEM1" embeddings, "STTH1" text head)
    version   u32 LE   (= 1)
    count     u32 LE   rows
    dim       u32 LE   columns
    normalized u8      nonzero if rows are L2-normalized
    ids       count x (u16 LE length + UTF-8 bytes)
    data      count*dim float32 LE, row-major

Head checkpoints ("STHD1") reuse the container and append the adapter
factors, per-class training counts, and a JSON provenance blob; see
:mod:`streamtrap.adapt`.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAGIC_EMBEDDINGS = b"STEM1"
MAGIC_TEXT_HEAD = b"STTH1"
MAGIC_HEAD = b"STHD1"
FORMAT_VERSION = 1
NORM_TOLERANCE = 1e-4


class StoreFormatError(ValueError):
    """Corrupted, truncated, or invalid store file."""


class DimensionMismatchError(ValueError):
    """Embedding and head dimensions disagree."""


@dataclass
class EmbeddingMatrix:
    """Dense float32 matrix with one row per image id."""

    ids: list[str]
    data: np.ndarray  # (count, dim) float32
    normalized: bool = True

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise StoreFormatError("embedding data must be 2-D")
        if len(self.ids) != self.data.shape[0]:
            raise StoreFormatError(
                f"{len(self.ids)} ids for {self.data.shape[0]} rows"
            )
        self._index = {image_id: i for i, image_id in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise StoreFormatError("duplicate ids in embedding matrix")

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def missing(self, ids: Sequence[str]) -> list[str]:
        return [i for i in ids if i not in self._index]

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        """Row block for the given ids, in the given order (float64)."""
        try:
            idx = [self._index[i] for i in ids]
        except KeyError as exc:
            raise StoreFormatError(f"unknown embedding id {exc.args[0]!r}") from exc
        return self.data[idx].astype(np.float64)


@dataclass
class TextHead:
    """Zero-shot class head: one L2-normalized text embedding per label."""

    labels: list[str]
    vectors: np.ndarray  # (C, dim) float32, unit rows

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or len(self.labels) != self.vectors.shape[0]:
            raise StoreFormatError("label count must match vector rows")
        if len(set(self.labels)) != len(self.labels):
            raise StoreFormatError("duplicate labels in text head")
        _check_normalized(self.vectors, "text head")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def _check_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise StoreFormatError(f"{what} contains non-finite values")


def _check_normalized(data: np.ndarray, what: str) -> None:
    _check_finite(data, what)
    norms = np.linalg.norm(data.astype(np.float64), axis=1)
    bad = np.abs(norms - 1.0) > NORM_TOLERANCE
    if np.any(bad):
        i = int(np.argmax(bad))
        raise StoreFormatError(
            f"{what} row {i} has norm {norms[i]:.6f}, expected 1 within {NORM_TOLERANCE}"
        )


def _pack_payload(magic: bytes, ids: Sequence[str], data: np.ndarray, normalized: bool) -> bytes:
    data = np.ascontiguousarray(data, dtype="<f4")
    _check_finite(data, "store payload")
    if data.shape[1] <= 0:
        raise StoreFormatError("dim must be positive")
    if normalized:
        _check_normalized(data, "store payload")
    out = io.BytesIO()
    out.write(magic)
    out.write(struct.pack("<III", FORMAT_VERSION, data.shape[0], data.shape[1]))
    out.write(struct.pack("<B", 1 if normalized else 0))
    for image_id in ids:
        raw = image_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise StoreFormatError(f"id too long: {image_id[:32]!r}...")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
    out.write(data.tobytes(order="C"))
    return out.getvalue()


class _Reader:
    def __init__(self, blob: bytes, path=None):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise StoreFormatError(f"truncated store file {self.path or ''}".strip())
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]


def _unpack_payload(reader: _Reader, magic: bytes):
    got = reader.take(5)
    if got != magic:
        raise StoreFormatError(f"bad magic {got!r}, expected {magic!r}")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise StoreFormatError(f"unsupported version {version}")
    count = reader.u32()
    dim = reader.u32()
    if dim == 0:
        raise StoreFormatError("dim must be positive")
    normalized = reader.u8() != 0
    ids = []
    for _ in range(count):
        length = reader.u16()
        try:
            ids.append(reader.take(length).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise StoreFormatError(f"invalid UTF-8 id: {exc}") from exc
    raw = reader.take(count * dim * 4)
    data = np.frombuffer(raw, dtype="<f4").reshape(count, dim).copy()
    _check_finite(data, "store payload")
    if normalized and count:
        _check_normalized(data, "store payload")
    return ids, data, normalized


def write_store(matrix: EmbeddingMatrix, path) -> None:
    blob = _pack_payload(MAGIC_EMBEDDINGS, matrix.ids, matrix.data, matrix.normalized)
    with open(path, "wb") as fh:
        fh.write(blob)


def read_store(path) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    ids, data, normalized = _unpack_payload(reader, MAGIC_EMBEDDINGS)
    if reader.pos != len(reader.blob):
        raise StoreFormatError(f"trailing bytes in {path}")
    return EmbeddingMatrix(ids=ids, data=data, normalized=normalized)


def write_text_head(head: TextHead, path) -> None:
    blob = _pack_payload(MAGIC_TEXT_HEAD, head.labels, head.vectors, normalized=True)
    with open(path, "wb") as fh:
        fh.write(blob)


def read_text_head(path) -> TextHead:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    labels, vectors, _ = _unpack_payload(reader, MAGIC_TEXT_HEAD)
    if reader.pos != len(reader.blob):
        raise StoreFormatError(f"trailing bytes in {path}")
    return TextHead(labels=labels, vectors=vectors)


def zero_shot_predict(head: TextHead, embedding: np.ndarray) -> str:
    """Label whose head vector has the largest inner product.

    Ties break toward the lowest label index.
    """
    z = np.asarray(embedding, dtype=np.float64).reshape(-1)
    if z.shape[0] != head.dim:
        raise DimensionMismatchError(
            f"embedding dim {z.shape[0]} vs head dim {head.dim}"
        )
    scores = head.vectors.astype(np.float64) @ z
    return head.labels[int(np.argmax(scores))]
