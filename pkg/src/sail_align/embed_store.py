"""On-disk store for pre-encoded embeddings and deterministic batching.

File format (SEB1), all fields little-endian:

    magic   "SEB1"      4 bytes
    version u32 = 1
    dtype   u32         0 = float32 (embedding files), 1 = float64 (checkpoint tensors)
    n_rows  u64
    dim     u32
    reserved u32 = 0
    payload n_rows * dim values, row-major
    crc32   u32         IEEE CRC32 of header + payload

Embedding files on disk are always float32; the float64 dtype code exists
only for checkpoint tensor blocks, which reuse this container. A sidecar
manifest ``<name>.manifest.json`` carries provenance (encoder_name,
source_dataset, n_rows, dim, created_unix_ms, optional ids). Label files
are SEB1 with dim=1 holding class indices as integral float32, with an
``n_classes`` manifest key.
"""

from __future__ import annotations

import json
import os
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator, Sequence

import numpy as np

from .errors import (
    ChecksumError,
    ConfigError,
    FormatError,
    TruncatedFileError,
    ValidationError,
)
from .rng import SplitMix64, epoch_stream_seed

MAGIC = b"SEB1"
VERSION = 1
DTYPE_F32 = 0
DTYPE_F64 = 1

_HEADER = struct.Struct("<4sIIQII")
_CRC = struct.Struct("<I")
_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_F64: np.dtype("<f8")}


@dataclass(frozen=True)
class EmbeddingMatrix:
    """N rows of d-dimensional float32 features, the currency of the system."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValidationError(f"embedding matrix must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("embedding matrix contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def manifest_path(path: str | Path) -> Path:
    """Sidecar path for an SEB1 file: strips a trailing .seb1 before appending."""
    p = Path(path)
    stem = p.name[: -len(".seb1")] if p.name.endswith(".seb1") else p.name
    return p.with_name(stem + ".manifest.json")


def write_block(arr: np.ndarray, fh: BinaryIO) -> None:
    """Write one SEB1 block (header + payload + CRC) to an open stream."""
    if arr.ndim != 2:
        raise ValidationError(f"SEB1 block must be 2-D, got shape {arr.shape}")
    if arr.dtype == np.float32:
        code = DTYPE_F32
    elif arr.dtype == np.float64:
        code = DTYPE_F64
    else:
        raise ValidationError(f"unsupported block dtype {arr.dtype}")
    if not np.isfinite(arr).all():
        raise ValidationError("refusing to write non-finite values")
    header = _HEADER.pack(MAGIC, VERSION, code, arr.shape[0], arr.shape[1], 0)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    crc = zlib.crc32(payload, zlib.crc32(header))
    fh.write(header)
    fh.write(payload)
    fh.write(_CRC.pack(crc))


def read_block(fh: BinaryIO, path: str = "") -> np.ndarray:
    """Read one SEB1 block; raises distinct errors for each corruption mode."""
    raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path or 'stream'}: incomplete SEB1 header")
    magic, version, dtype_code, n_rows, dim, reserved = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path or 'stream'}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path or 'stream'}: unsupported version {version}")
    if dtype_code not in _DTYPES:
        raise FormatError(f"{path or 'stream'}: unknown dtype code {dtype_code}")
    dtype = _DTYPES[dtype_code]
    n_bytes = n_rows * dim * dtype.itemsize
    payload = fh.read(n_bytes)
    if len(payload) < n_bytes:
        raise TruncatedFileError(
            f"{path or 'stream'}: payload truncated ({len(payload)} of {n_bytes} bytes)"
        )
    stored = fh.read(_CRC.size)
    if len(stored) < _CRC.size:
        raise TruncatedFileError(f"{path or 'stream'}: missing CRC32 footer")
    actual = zlib.crc32(payload, zlib.crc32(raw))
    (expected,) = _CRC.unpack(stored)
    if expected != actual:
        raise ChecksumError(expected, actual, path)
    return np.frombuffer(payload, dtype=dtype).reshape(n_rows, dim).copy()


def write_embeddings(
    matrix: EmbeddingMatrix, path: str | Path, manifest: dict | None = None
) -> None:
    """Write a float32 embedding file, byte-identical for identical input.

    Validates before touching the filesystem and writes via a temp file +
    rename so a failed write never leaves a partial file behind.
    """
    if not np.isfinite(matrix.data).all():
        raise ValidationError("refusing to write non-finite values")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            write_block(matrix.data, fh)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    if manifest is not None:
        base = {"n_rows": matrix.n_rows, "dim": matrix.dim}
        base.update(manifest)
        base.setdefault("created_unix_ms", int(time.time() * 1000))
        manifest_path(path).write_text(
            json.dumps(base, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read and CRC-verify a float32 embedding file."""
    path = Path(path)
    with open(path, "rb") as fh:
        arr = read_block(fh, str(path))
    if arr.dtype != np.float32:
        raise FormatError(f"{path}: embedding files must be float32 (dtype code 0)")
    return EmbeddingMatrix(arr)


def read_manifest(path: str | Path) -> dict | None:
    mp = manifest_path(path)
    if not mp.exists():
        return None
    return json.loads(mp.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class PairedDataset:
    """Row-aligned image/text embeddings; row i of every matrix is one pair."""

    images: EmbeddingMatrix
    texts: EmbeddingMatrix
    hq_texts: EmbeddingMatrix | None = None
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.images.n_rows != self.texts.n_rows:
            raise ValidationError(
                f"paired dataset row mismatch: {self.images.n_rows} images "
                f"vs {self.texts.n_rows} texts"
            )
        if self.hq_texts is not None and self.hq_texts.n_rows != self.images.n_rows:
            raise ValidationError(
                f"hq_texts row mismatch: {self.hq_texts.n_rows} vs {self.images.n_rows}"
            )
        if self.ids is not None and len(self.ids) != self.images.n_rows:
            raise ValidationError("ids length does not match dataset rows")

    @property
    def n_rows(self) -> int:
        return self.images.n_rows


def load_paired_dataset(
    images_path: str | Path,
    texts_path: str | Path,
    hq_texts_path: str | Path | None = None,
) -> PairedDataset:
    images = read_embeddings(images_path)
    texts = read_embeddings(texts_path)
    hq = read_embeddings(hq_texts_path) if hq_texts_path is not None else None
    manifest = read_manifest(images_path)
    ids = None
    if manifest and isinstance(manifest.get("ids"), list):
        ids = tuple(str(i) for i in manifest["ids"])
    return PairedDataset(images=images, texts=texts, hq_texts=hq, ids=ids)


@dataclass(frozen=True)
class LabeledDataset:
    """Embeddings with one class index per row."""

    embeddings: EmbeddingMatrix
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if labels.shape[0] != self.embeddings.n_rows:
            raise ValidationError(
                f"label count {labels.shape[0]} != rows {self.embeddings.n_rows}"
            )
        if self.n_classes < 1:
            raise ValidationError("n_classes must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValidationError(
                f"labels must lie in [0, {self.n_classes}); "
                f"found range [{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "labels", labels)


def write_labels(
    labels: Sequence[int], n_classes: int, path: str | Path, manifest: dict | None = None
) -> None:
    """Labels ride in an SEB1 file as an (n, 1) integral float32 column."""
    arr = np.asarray(labels, dtype=np.int64).reshape(-1, 1)
    matrix = EmbeddingMatrix(arr.astype(np.float32))
    merged = {"n_classes": int(n_classes)}
    merged.update(manifest or {})
    write_embeddings(matrix, path, manifest=merged)


def load_labeled_dataset(
    embeddings_path: str | Path, labels_path: str | Path
) -> LabeledDataset:
    embeddings = read_embeddings(embeddings_path)
    label_mat = read_embeddings(labels_path)
    if label_mat.dim != 1:
        raise FormatError(f"{labels_path}: label files must have dim=1")
    raw = label_mat.data.ravel()
    if not np.array_equal(raw, np.round(raw)):
        raise ValidationError(f"{labels_path}: labels are not integral")
    manifest = read_manifest(labels_path) or {}
    if "n_classes" not in manifest:
        raise FormatError(f"{labels_path}: manifest missing n_classes")
    return LabeledDataset(
        embeddings=embeddings,
        labels=raw.astype(np.int64),
        n_classes=int(manifest["n_classes"]),
    )


@dataclass(frozen=True)
class BatchPlan:
    """Permutation of row indices plus batch bookkeeping for one epoch.

    The permutation is SplitMix64-seeded Fisher-Yates over (seed, epoch),
    so the same inputs give the same order on every platform. The last
    partial batch is dropped (the contrastive losses assume a fixed batch
    size, and a 1-row batch could never be contrasted anyway).
    """

    seed: int
    batch_size: int
    epoch: int
    order: np.ndarray = field(repr=False)

    @property
    def n_rows(self) -> int:
        return int(self.order.shape[0])

    @property
    def n_batches(self) -> int:
        return self.n_rows // self.batch_size

    def batches(self) -> Iterator[np.ndarray]:
        for b in range(self.n_batches):
            yield self.order[b * self.batch_size : (b + 1) * self.batch_size]


def make_batch_plan(n_rows: int, batch_size: int, seed: int, epoch: int) -> BatchPlan:
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    if n_rows < 2:
        raise ValidationError(f"need at least 2 rows to batch, got {n_rows}")
    prng = SplitMix64(epoch_stream_seed(seed, epoch))
    order = np.asarray(prng.shuffle_indices(n_rows), dtype=np.int64)
    return BatchPlan(seed=seed, batch_size=batch_size, epoch=epoch, order=order)
