"""Dense linear algebra with a reproducibility contract.

Every operation here is deterministic for fixed inputs regardless of the
configured worker count: parallel matmul partitions output rows into
fixed-size chunks (the chunk grid never depends on the pool size), so the
floating-point result is the byte-for-byte concatenation of identical
per-chunk products no matter how the chunks are scheduled.

Dot products over dim >= 512 accumulate in float64 even when the operands
are float32; large-batch loss sums magnify float32 rounding otherwise.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ShapeError

_CHUNK_ROWS = 512
_WIDE_ACCUM_DIM = 512

_worker_count = 0  # 0 = resolve lazily from env / cpu count


def set_worker_count(n: int) -> None:
    """Cap the worker pool. Results are identical for every value of n."""
    global _worker_count
    _worker_count = max(1, int(n))


def worker_count() -> int:
    if _worker_count > 0:
        return _worker_count
    env = os.environ.get("SAIL_ALIGN_THREADS", "")
    if env.isdigit() and int(env) > 0:
        return int(env)
    return os.cpu_count() or 1


class Normalized(NamedTuple):
    values: np.ndarray
    zero_rows: int


@dataclass(frozen=True)
class SimilarityMatrix:
    """Cosine similarities with provenance tags for the two sides."""

    values: np.ndarray
    row_tag: str = "image"
    col_tag: str = "text"

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _chunk_spans(n_rows: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + _CHUNK_ROWS, n_rows)) for lo in range(0, n_rows, _CHUNK_ROWS)]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b with deterministic chunked execution and wide accumulation."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dims differ: {a.shape} @ {b.shape}")

    wide = a.dtype == np.float32 and b.dtype == np.float32 and a.shape[1] >= _WIDE_ACCUM_DIM
    lhs = a.astype(np.float64) if wide else a
    rhs = b.astype(np.float64) if wide else b

    if a.shape[0] <= _CHUNK_ROWS:
        # single chunk: same computation as the pooled path, without the
        # scheduling machinery
        out = lhs @ rhs
    else:
        out = np.empty((a.shape[0], b.shape[1]), dtype=np.result_type(lhs, rhs))
        spans = _chunk_spans(a.shape[0])

        def run(span: tuple[int, int]) -> None:
            lo, hi = span
            out[lo:hi] = lhs[lo:hi] @ rhs

        workers = worker_count()
        if workers <= 1:
            for span in spans:
                run(span)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(run, spans))

    if wide:
        return out.astype(np.float32)
    return out


def transpose(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D array, got shape {a.shape}")
    return np.ascontiguousarray(a.T)


def row_sum(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ShapeError(f"row_sum needs a 2-D array, got shape {a.shape}")
    if a.dtype == np.float32 and a.shape[1] >= _WIDE_ACCUM_DIM:
        return a.sum(axis=1, dtype=np.float64).astype(np.float32)
    return a.sum(axis=1)


def row_norms(a: np.ndarray) -> np.ndarray:
    """Euclidean norm per row, accumulated in float64."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise ShapeError(f"row_norms needs a 2-D array, got shape {a.shape}")
    wide = a.astype(np.float64, copy=False)
    return np.sqrt(np.einsum("ij,ij->i", wide, wide))


def l2_normalize(x: np.ndarray) -> Normalized:
    """Unit-norm rows; zero rows pass through unchanged and are counted."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize needs a 2-D array, got shape {x.shape}")
    norms = row_norms(x)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    values = (x / safe[:, None].astype(x.dtype)) if x.dtype == np.float32 else x / safe[:, None]
    return Normalized(values=values, zero_rows=int(zero.sum()))


def cosine_matrix(
    a: np.ndarray, b: np.ndarray, row_tag: str = "image", col_tag: str = "text"
) -> SimilarityMatrix:
    """Pairwise cosine similarities: entry (i, j) = normalized(a_i) . normalized(b_j)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("cosine_matrix needs 2-D operands")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dim mismatch: {a.shape[1]} vs {b.shape[1]}")
    an = l2_normalize(a.astype(np.float64, copy=False)).values
    bn = l2_normalize(b.astype(np.float64, copy=False)).values
    values = matmul(an, transpose(bn))
    return SimilarityMatrix(values=values, row_tag=row_tag, col_tag=col_tag)
