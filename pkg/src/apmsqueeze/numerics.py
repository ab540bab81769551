"""Dense float64 vector helpers and chunk partitioning.

Vectors are plain 1-D ``numpy.ndarray`` objects of dtype float64. Every
public function returns a fresh array and never mutates its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DimensionError, DomainError

DEFAULT_FLOOR = 1e-8


def as_vector(a, name: str = "vector") -> np.ndarray:
    """Coerce ``a`` to a finite 1-D float64 array (copying only if needed)."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


def elementwise_divide(a, b, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """``a[i] / max(b[i], floor)``."""
    if not floor > 0:
        raise DomainError("floor must be positive")
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    check_same_length(a, b)
    return a / np.maximum(b, floor)


def elementwise_sqrt(a) -> np.ndarray:
    a = as_vector(a)
    if np.any(a < 0):
        raise DomainError("square root of a negative element")
    return np.sqrt(a)


def l2_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.sqrt(np.dot(a, a)))


@dataclass(frozen=True)
class ChunkLayout:
    """Contiguous partition of ``total_len`` coordinates into ``n_chunks`` pieces."""

    total_len: int
    n_chunks: int
    offsets: tuple[tuple[int, int], ...]

    @property
    def lengths(self) -> list[int]:
        return [length for _, length in self.offsets]

    def slice(self, k: int) -> slice:
        start, length = self.offsets[k]
        return slice(start, start + length)

    def split(self, a: np.ndarray) -> list[np.ndarray]:
        if a.shape[0] != self.total_len:
            raise DimensionError(f"expected length {self.total_len}, got {a.shape[0]}")
        return [a[self.slice(k)] for k in range(self.n_chunks)]

    def join(self, chunks) -> np.ndarray:
        if len(chunks) != self.n_chunks:
            raise DimensionError(f"expected {self.n_chunks} chunks, got {len(chunks)}")
        for k, c in enumerate(chunks):
            if len(c) != self.offsets[k][1]:
                raise DimensionError(f"chunk {k} has length {len(c)}, expected {self.offsets[k][1]}")
        if self.n_chunks == 0:
            return np.zeros(0)
        return np.concatenate([np.asarray(c, dtype=np.float64) for c in chunks])


def make_chunk_layout(total_len: int, n_chunks: int) -> ChunkLayout:
    """Split ``total_len`` into ``n_chunks`` near-equal contiguous chunks.

    The remainder ``total_len % n_chunks`` is handed out one element at a time
    to the lowest-indexed chunks, so ``(10, 4)`` gives lengths ``[3, 3, 2, 2]``.
    Zero-length chunks are allowed when ``total_len < n_chunks``.
    """
    if n_chunks < 1:
        raise ConfigError("n_chunks must be at least 1")
    if total_len < 0:
        raise ConfigError("total_len must be non-negative")
    base, rem = divmod(total_len, n_chunks)
    offsets = []
    start = 0
    for k in range(n_chunks):
        length = base + (1 if k < rem else 0)
        offsets.append((start, length))
        start += length
    return ChunkLayout(total_len, n_chunks, tuple(offsets))
