"""Uniform grid hash for fixed-radius nearest-neighbor lookups in the map plane.

The cell size equals the largest query radius, so every neighbor within the
radius lives in the 3x3 block of cells around the query point. Chosen over
tree structures because the radii are fixed for the lifetime of a run.
"""

from __future__ import annotations

import math


class GridIndex:
    """Buckets keyed by (label, cell) holding (key, x, y) entries.

    Keys are caller-assigned integers; nearest-neighbor ties on distance are
    broken toward the smallest key, which keeps lookups deterministic.
    """

    __slots__ = ("cell_size", "_inv", "_buckets")

    def __init__(self, cell_size: float):
        if not (cell_size > 0.0 and math.isfinite(cell_size)):
            raise ValueError(f"cell size must be positive, got {cell_size}")
        self.cell_size = cell_size
        self._inv = 1.0 / cell_size
        self._buckets: dict[tuple[str, int, int], list[tuple[int, float, float]]] = {}

    def __len__(self) -> int:
        return sum(len(b) for b in self._buckets.values())

    def insert(self, label: str, key: int, x: float, y: float) -> None:
        cell = (label, math.floor(x * self._inv), math.floor(y * self._inv))
        self._buckets.setdefault(cell, []).append((key, x, y))

    def remove(self, label: str, key: int, x: float, y: float) -> None:
        cell = (label, math.floor(x * self._inv), math.floor(y * self._inv))
        bucket = self._buckets[cell]
        for i, entry in enumerate(bucket):
            if entry[0] == key:
                bucket.pop(i)
                if not bucket:
                    del self._buckets[cell]
                return
        raise KeyError(f"{label}:{key} not present in its cell")

    def move(self, label: str, key: int, old_x: float, old_y: float, x: float, y: float) -> None:
        old_cell = (math.floor(old_x * self._inv), math.floor(old_y * self._inv))
        new_cell = (math.floor(x * self._inv), math.floor(y * self._inv))
        if old_cell == new_cell:
            bucket = self._buckets[(label, *old_cell)]
            for i, entry in enumerate(bucket):
                if entry[0] == key:
                    bucket[i] = (key, x, y)
                    return
            raise KeyError(f"{label}:{key} not present in its cell")
        self.remove(label, key, old_x, old_y)
        self.insert(label, key, x, y)

    def nearest(self, label: str, x: float, y: float, radius: float) -> int | None:
        """Key of the nearest entry within ``radius``, or None.

        Requires radius <= cell_size (the 3x3 neighborhood guarantee).
        """
        if radius > self.cell_size:
            raise ValueError(f"radius {radius} exceeds cell size {self.cell_size}")
        ci = math.floor(x * self._inv)
        cj = math.floor(y * self._inv)
        r2 = radius * radius
        best_d2 = math.inf
        best_key = -1
        found = False
        buckets = self._buckets
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                bucket = buckets.get((label, ci + di, cj + dj))
                if not bucket:
                    continue
                for key, px, py in bucket:
                    dx = x - px
                    dy = y - py
                    d2 = dx * dx + dy * dy
                    if d2 <= r2 and (d2 < best_d2 or (d2 == best_d2 and key < best_key)):
                        best_d2 = d2
                        best_key = key
                        found = True
        return best_key if found else None
