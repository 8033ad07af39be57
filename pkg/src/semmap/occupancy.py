"""Log-odds occupancy grid built from 2D scans at known poses.

The inverse sensor model frees every cell a beam traverses and bumps the
endpoint cell toward occupied; beams at the maximum range free their path
without an endpoint update. Cell updates accumulate per scan before clamping,
so integrating the beams of one scan is order-independent.

Single writer per grid; classification and export read an immutable copy of
the cell array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose2

OCCUPIED = 1
FREE = 0
UNKNOWN = -1

# classification thresholds, mirrored verbatim into exported map metadata
OCCUPIED_THRESHOLD = 0.65
FREE_THRESHOLD = 0.25


class ExportError(Exception):
    """Map export failed; the message names the offending path."""


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def probability(log_odds: float) -> float:
    return 1.0 / (1.0 + math.exp(-log_odds))


@dataclass(frozen=True)
class LaserScan:
    """One 2D scan; non-finite ranges mean no return for that beam."""

    stamp: float
    angle_min: float
    angle_increment: float
    range_min: float
    range_max: float
    ranges: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.angle_increment == 0.0:
            raise ValueError("angle_increment must be nonzero")
        if not 0.0 <= self.range_min < self.range_max:
            raise ValueError(f"bad range bounds [{self.range_min}, {self.range_max}]")


@dataclass
class OccupancyParams:
    """Inverse sensor model settings. Defaults are standard indoor values."""

    resolution: float = 0.05
    p_occ: float = 0.7
    p_free: float = 0.4
    p_min: float = 0.12
    p_max: float = 0.97

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        for name in ("p_occ", "p_free", "p_min", "p_max"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1)")
        if self.p_min >= self.p_max:
            raise ValueError("p_min must be below p_max")

    @property
    def l_occ(self) -> float:
        return logit(self.p_occ)

    @property
    def l_free(self) -> float:
        return logit(self.p_free)

    @property
    def l_min(self) -> float:
        return logit(self.p_min)

    @property
    def l_max(self) -> float:
        return logit(self.p_max)


class OccupancyGrid:
    """Dense log-odds grid; cell (0, 0)'s corner sits at the world origin point.

    Cells are indexed ``cells[iy, ix]``. Untouched cells hold exactly log-odds
    zero. The grid grows by doubling toward whichever side an update needs,
    keeping existing cells anchored to their world coordinates.
    """

    def __init__(
        self,
        resolution: float,
        origin_x: float = 0.0,
        origin_y: float = 0.0,
        width: int = 1,
        height: int = 1,
    ):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        if width < 1 or height < 1:
            raise ValueError("grid must have at least one cell")
        self.resolution = float(resolution)
        self.origin_x = float(origin_x)
        self.origin_y = float(origin_y)
        self.cells = np.zeros((height, width), dtype=np.float64)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def origin(self) -> Pose2:
        return Pose2(self.origin_x, self.origin_y, 0.0)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (
            math.floor((x - self.origin_x) / self.resolution),
            math.floor((y - self.origin_y) / self.resolution),
        )

    def log_odds_at(self, x: float, y: float) -> float:
        ix, iy = self.cell_of(x, y)
        return float(self.cells[iy, ix])

    def ensure_world_rect(self, x0: float, x1: float, y0: float, y1: float) -> None:
        """Grow until the axis-aligned world rect is covered."""
        for _ in range(128):
            h, w = self.cells.shape
            ix0, iy0 = self.cell_of(min(x0, x1), min(y0, y1))
            ix1, iy1 = self.cell_of(max(x0, x1), max(y0, y1))
            if 0 <= ix0 and ix1 < w and 0 <= iy0 and iy1 < h:
                return
            if ix0 < 0:
                self.cells = np.hstack([np.zeros((h, w), dtype=np.float64), self.cells])
                self.origin_x -= w * self.resolution
            elif ix1 >= w:
                self.cells = np.hstack([self.cells, np.zeros((h, w), dtype=np.float64)])
            elif iy0 < 0:
                self.cells = np.vstack([np.zeros((h, w), dtype=np.float64), self.cells])
                self.origin_y -= h * self.resolution
            else:
                self.cells = np.vstack([self.cells, np.zeros((h, w), dtype=np.float64)])
        raise ValueError("grid growth did not converge; world rect is unreasonable")


def _traverse(
    sx: float, sy: float, ex: float, ey: float, ox: float, oy: float, inv: float
) -> tuple[list[tuple[int, int]], tuple[int, int]]:
    """Integer grid walk along a segment.

    Returns (cells strictly before the endpoint cell, endpoint cell). Cells
    are visited by crossing boundaries in parameter order, so the walk touches
    exactly the cells the segment passes through.
    """
    ix = math.floor((sx - ox) * inv)
    iy = math.floor((sy - oy) * inv)
    exi = math.floor((ex - ox) * inv)
    eyi = math.floor((ey - oy) * inv)
    cells: list[tuple[int, int]] = []
    if ix == exi and iy == eyi:
        return cells, (exi, eyi)
    dx = ex - sx
    dy = ey - sy
    res = 1.0 / inv
    if dx != 0.0:
        step_x = 1 if dx > 0.0 else -1
        boundary = (ix + (1 if dx > 0.0 else 0)) * res + ox
        t_max_x = (boundary - sx) / dx
        t_delta_x = res / abs(dx)
    else:
        step_x = 0
        t_max_x = math.inf
        t_delta_x = math.inf
    if dy != 0.0:
        step_y = 1 if dy > 0.0 else -1
        boundary = (iy + (1 if dy > 0.0 else 0)) * res + oy
        t_max_y = (boundary - sy) / dy
        t_delta_y = res / abs(dy)
    else:
        step_y = 0
        t_max_y = math.inf
        t_delta_y = math.inf
    budget = abs(exi - ix) + abs(eyi - iy) + 4
    for _ in range(budget):
        cells.append((ix, iy))
        if t_max_x < t_max_y:
            ix += step_x
            t_max_x += t_delta_x
        else:
            iy += step_y
            t_max_y += t_delta_y
        if ix == exi and iy == eyi:
            break
    return cells, (exi, eyi)


def integrate_scan(
    grid: OccupancyGrid, pose: Pose2, scan: LaserScan, params: OccupancyParams
) -> OccupancyGrid:
    """Fold one scan taken at ``pose`` (the sensor pose, map frame) into the grid."""
    sx = pose.x
    sy = pose.y
    rays: list[tuple[float, float, bool]] = []
    min_x = max_x = sx
    min_y = max_y = sy
    angle = pose.yaw + scan.angle_min
    for r in scan.ranges:
        a = angle
        angle += scan.angle_increment
        if not math.isfinite(r):
            continue  # no return
        if r < scan.range_min or r > scan.range_max:
            continue
        ex = sx + r * math.cos(a)
        ey = sy + r * math.sin(a)
        rays.append((ex, ey, r < scan.range_max))
        min_x = min(min_x, ex)
        max_x = max(max_x, ex)
        min_y = min(min_y, ey)
        max_y = max(max_y, ey)
    if not rays:
        return grid
    grid.ensure_world_rect(min_x, max_x, min_y, max_y)
    inv = 1.0 / grid.resolution
    ox = grid.origin_x
    oy = grid.origin_y
    # integer hit tallies per cell, folded into log-odds in one expression, so
    # permuting the scan's rays yields a bit-identical grid
    counts: dict[tuple[int, int], list[int]] = {}
    for ex, ey, hit in rays:
        cells, end = _traverse(sx, sy, ex, ey, ox, oy, inv)
        for c in cells:
            entry = counts.get(c)
            if entry is None:
                counts[c] = [1, 0]
            else:
                entry[0] += 1
        if hit:
            entry = counts.get(end)
            if entry is None:
                counts[end] = [0, 1]
            else:
                entry[1] += 1
    n = len(counts)
    iys = np.fromiter((c[1] for c in counts), dtype=np.intp, count=n)
    ixs = np.fromiter((c[0] for c in counts), dtype=np.intp, count=n)
    n_free = np.fromiter((v[0] for v in counts.values()), dtype=np.float64, count=n)
    n_occ = np.fromiter((v[1] for v in counts.values()), dtype=np.float64, count=n)
    vals = n_free * params.l_free + n_occ * params.l_occ
    arr = grid.cells
    arr[iys, ixs] = np.clip(arr[iys, ixs] + vals, params.l_min, params.l_max)
    return grid


def classify(grid: OccupancyGrid) -> np.ndarray:
    """Trinary view: OCCUPIED above, FREE below, UNKNOWN between the thresholds."""
    p = 1.0 / (1.0 + np.exp(-grid.cells))
    out = np.full(grid.cells.shape, UNKNOWN, dtype=np.int8)
    out[p > OCCUPIED_THRESHOLD] = OCCUPIED
    out[p < FREE_THRESHOLD] = FREE
    return out


def export_map(grid: OccupancyGrid, path_prefix: str | Path) -> tuple[Path, Path]:
    """Write ``<prefix>.pgm`` (binary P5) plus ``<prefix>.yaml`` metadata.

    Image row 0 is the top of the map (highest y); occupied pixels are 0,
    free 254, unknown 205 — the common robotics map-server convention.
    """
    if grid.cells.size == 0:
        raise ValueError("cannot export an empty grid")
    tri = classify(grid)
    img = np.full(tri.shape, 205, dtype=np.uint8)
    img[tri == FREE] = 254
    img[tri == OCCUPIED] = 0
    img = img[::-1, :]
    prefix = Path(path_prefix)
    pgm_path = prefix.with_name(prefix.name + ".pgm")
    yaml_path = prefix.with_name(prefix.name + ".yaml")
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    metadata = (
        f"image: {pgm_path.name}\n"
        f"resolution: {grid.resolution}\n"
        f"origin: [{grid.origin_x}, {grid.origin_y}, 0.0]\n"
        f"negate: 0\n"
        f"occupied_thresh: {OCCUPIED_THRESHOLD}\n"
        f"free_thresh: {FREE_THRESHOLD}\n"
    )
    try:
        pgm_path.write_bytes(header + img.tobytes())
        yaml_path.write_text(metadata, encoding="ascii")
    except OSError as exc:
        raise ExportError(f"map export under {prefix} failed: {exc}") from exc
    return pgm_path, yaml_path
