import math
import random

import pytest

from semmap.spatial import GridIndex


def exhaustive_nearest(points, label, x, y, radius):
    best = None
    r2 = radius * radius
    for key, plabel, px, py in points:
        if plabel != label:
            continue
        dx = x - px
        dy = y - py
        d2 = dx * dx + dy * dy
        if d2 <= r2 and (best is None or (d2, key) < best):
            best = (d2, key)
    return best[1] if best is not None else None


def test_nearest_matches_exhaustive_search():
    rng = random.Random(42)
    radius = 0.8
    index = GridIndex(radius)
    points = []
    for key in range(500):
        label = rng.choice(("a", "b", "c"))
        x = rng.uniform(-20, 20)
        y = rng.uniform(-20, 20)
        index.insert(label, key, x, y)
        points.append((key, label, x, y))
    for _ in range(10_000):
        label = rng.choice(("a", "b", "c"))
        x = rng.uniform(-22, 22)
        y = rng.uniform(-22, 22)
        assert index.nearest(label, x, y, radius) == exhaustive_nearest(points, label, x, y, radius)


def test_nearest_breaks_distance_ties_by_lowest_key():
    index = GridIndex(1.0)
    index.insert("a", 7, 1.0, 0.0)
    index.insert("a", 3, -1.0, 0.0)
    assert index.nearest("a", 0.0, 0.0, 1.0) == 3


def test_nearest_respects_label_partitions():
    index = GridIndex(1.0)
    index.insert("a", 1, 0.0, 0.0)
    assert index.nearest("b", 0.0, 0.0, 1.0) is None


def test_radius_boundary_is_inclusive():
    index = GridIndex(0.5)
    index.insert("a", 1, 0.5, 0.0)
    assert index.nearest("a", 0.0, 0.0, 0.5) == 1


def test_nearest_rejects_radius_beyond_cell_size():
    index = GridIndex(0.5)
    with pytest.raises(ValueError):
        index.nearest("a", 0.0, 0.0, 0.6)


def test_move_relocates_entry_across_cells():
    index = GridIndex(1.0)
    index.insert("a", 1, 0.1, 0.1)
    index.move("a", 1, 0.1, 0.1, 5.0, 5.0)
    assert index.nearest("a", 0.0, 0.0, 1.0) is None
    assert index.nearest("a", 5.2, 5.2, 1.0) == 1


def test_move_within_cell_updates_coordinates():
    index = GridIndex(1.0)
    index.insert("a", 1, 0.1, 0.1)
    index.move("a", 1, 0.1, 0.1, 0.4, 0.4)
    # must now miss a query that only reaches the old position
    assert index.nearest("a", -0.55, 0.1, 0.7) is None
    assert index.nearest("a", 0.4, 0.4, 0.7) == 1


def test_remove_deletes_entry():
    index = GridIndex(1.0)
    index.insert("a", 1, 0.0, 0.0)
    index.remove("a", 1, 0.0, 0.0)
    assert index.nearest("a", 0.0, 0.0, 1.0) is None
    assert len(index) == 0


def test_remove_missing_key_raises():
    index = GridIndex(1.0)
    index.insert("a", 1, 0.0, 0.0)
    with pytest.raises(KeyError):
        index.remove("a", 2, 0.0, 0.0)


def test_negative_coordinates_hash_correctly():
    index = GridIndex(0.8)
    index.insert("a", 1, -0.01, -0.01)
    assert index.nearest("a", 0.01, 0.01, 0.8) == 1
    assert math.floor(-0.01 / 0.8) == -1  # the property the bucketing relies on
