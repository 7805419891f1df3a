"""In-process latency metrics: a fixed-bucket histogram plus the raw sample
kept for quantile queries."""
from __future__ import annotations

import threading
from bisect import bisect_left

__all__ = ["LatencyHistogram"]


class LatencyHistogram:
    """Counts per latency bucket; the last bucket is the overflow.

    Bucket i covers (edges[i-1], edges[i]]; the first covers (0, edges[0]]
    and values beyond the last edge land in the overflow bucket.
    """

    def __init__(self, edges_s):
        edges = tuple(float(e) for e in edges_s)
        if not edges:
            raise ValueError("edges_s must be non-empty")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("edges_s must be strictly increasing")
        self.edges_s = edges
        self._counts = [0] * (len(edges) + 1)
        self._total = 0
        self._lock = threading.Lock()

    def observe(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError(f"latency cannot be negative: {seconds}")
        index = bisect_left(self.edges_s, seconds)
        with self._lock:
            self._counts[index] += 1
            self._total += 1

    @property
    def counts(self) -> tuple[int, ...]:
        with self._lock:
            return tuple(self._counts)

    @property
    def total(self) -> int:
        with self._lock:
            return self._total

    def to_dict(self) -> dict:
        with self._lock:
            return {
                "bucket_edges_s": list(self.edges_s),
                "counts": list(self._counts),
                "total": self._total,
            }
