"""Fixed-capacity sliding-window query history with cached per-query summaries."""

from __future__ import annotations

import io
from typing import Iterator

import numpy as np

from ..featurespace import FeatureVector


class QueryHistory:
    """Ring buffer of queries, oldest evicted first.

    Each slot keeps the packed bit view (for popcount scans), the enabled
    count and the reconstruction loss. Running sums back the mean/stdev used
    by the empirical-rule indicators.
    """

    def __init__(self, dim: int, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.dim = dim
        self.capacity = capacity
        self._words = np.zeros((capacity, (dim + 63) // 64), dtype=np.uint64)
        self._counts = np.zeros(capacity, dtype=np.int64)
        self._losses = np.zeros(capacity, dtype=np.float64)
        self._vectors: list[FeatureVector | None] = [None] * capacity
        self._start = 0
        self._size = 0
        self._evictions = 0
        self._count_sum = 0
        self._count_sq = 0
        self._loss_sum = 0.0
        self._loss_sq = 0.0

    def __len__(self) -> int:
        return self._size

    def clear(self) -> None:
        self.__init__(self.dim, self.capacity)

    def append(self, v: FeatureVector, rec_loss: float = 0.0) -> None:
        if v.dim != self.dim:
            raise ValueError(f"query dim {v.dim} does not match history dim {self.dim}")
        if self._size == self.capacity:
            slot = self._start
            old_c, old_l = int(self._counts[slot]), float(self._losses[slot])
            self._count_sum -= old_c
            self._count_sq -= old_c * old_c
            self._loss_sum -= old_l
            self._loss_sq -= old_l * old_l
            self._start = (self._start + 1) % self.capacity
            self._evictions += 1
        else:
            slot = (self._start + self._size) % self.capacity
            self._size += 1
        c = v.enabled_count
        self._words[slot] = v.packed()
        self._counts[slot] = c
        self._losses[slot] = rec_loss
        self._vectors[slot] = v
        self._count_sum += c
        self._count_sq += c * c
        self._loss_sum += rec_loss
        self._loss_sq += rec_loss * rec_loss
        if self._evictions and self._evictions % self.capacity == 0:
            self._refresh_loss_sums()

    def _refresh_loss_sums(self) -> None:
        # float sums drift under repeated subtraction; resync once per full turnover
        live = self._live_losses()
        self._loss_sum = float(live.sum())
        self._loss_sq = float((live * live).sum())

    def _live_slots(self) -> np.ndarray:
        return (self._start + np.arange(self._size)) % self.capacity

    def _live_losses(self) -> np.ndarray:
        if self._size < self.capacity and self._start == 0:
            return self._losses[: self._size]
        return self._losses[self._live_slots()]

    def _live_block(self, arr: np.ndarray) -> np.ndarray:
        # slots are contiguous until the buffer first wraps; order is irrelevant for scans
        return arr[: self._size] if self._size < self.capacity else arr

    def entries(self) -> Iterator[tuple[FeatureVector, int, float]]:
        """Oldest to newest."""
        for slot in self._live_slots():
            yield self._vectors[slot], int(self._counts[slot]), float(self._losses[slot])

    def vectors(self) -> list[FeatureVector]:
        return [self._vectors[s] for s in self._live_slots()]

    def shared_counts(self, q: FeatureVector) -> np.ndarray:
        """|q AND h| for every live entry h (slot order)."""
        block = self._live_block(self._words)
        return np.bitwise_count(np.bitwise_and(block, q.packed())).sum(axis=1, dtype=np.int64)

    def scan(self, q: FeatureVector) -> tuple[np.ndarray, np.ndarray]:
        """(L0 distances, shared counts) against every live entry, in one popcount pass."""
        shared = self.shared_counts(q)
        dist = self._live_block(self._counts) + q.enabled_count - 2 * shared
        return dist, shared

    def count_stats(self) -> tuple[float, float]:
        return _mean_std(self._count_sum, self._count_sq, self._size)

    def loss_stats(self) -> tuple[float, float]:
        return _mean_std(self._loss_sum, self._loss_sq, self._size)

    def counts(self) -> np.ndarray:
        return self._counts[self._live_slots()]

    def losses(self) -> np.ndarray:
        return self._losses[self._live_slots()]

    def serialize(self) -> bytes:
        """Compact sparse encoding: per entry a uint32 count, float64 loss and the indices."""
        idx_type = np.uint16 if self.dim <= 65536 else np.uint32
        buf = io.BytesIO()
        buf.write(np.array([self.dim, self._size], dtype=np.uint32).tobytes())
        for v, c, loss in self.entries():
            buf.write(np.uint32(c).tobytes())
            buf.write(np.float64(loss).tobytes())
            buf.write(v.enabled.astype(idx_type).tobytes())
        return buf.getvalue()


def _mean_std(s: float, sq: float, n: int) -> tuple[float, float]:
    if n == 0:
        return 0.0, 0.0
    mean = s / n
    var = max(sq / n - mean * mean, 0.0)
    return float(mean), float(np.sqrt(var))
