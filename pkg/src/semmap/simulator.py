"""Synthetic scenes rendered into replayable run logs, plus run scoring.

A scenario is a room made of wall segments, static objects with a class and a
visual radius, a timed trajectory, stream rates, and a detector noise model.
Scans are exact ray-segment intersections against the walls; detections are
pinhole projections of visible objects, perturbed per the noise model.

Every random draw comes from a generator seeded by (scenario seed, event
tags), so the output is reproducible byte-for-byte and independent of record
ordering. Generation is pure: the same scenario and seed always produce the
same log.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .geometry import (
    Pose2,
    compose,
    inverse,
    pose2_compose,
    pose3_from_pose2,
    transform_point,
    wrap_angle,
)
from .ingestion import RunConfig, detections_line, pose_line, scan_line
from .occupancy import LaserScan
from .semantic_layer import ObjectMapSnapshot


class ScenarioError(ValueError):
    pass


Segment = tuple[float, float, float, float]


@dataclass(frozen=True)
class SceneObject:
    class_label: str
    x: float
    y: float
    radius: float


@dataclass(frozen=True)
class Waypoint:
    stamp: float
    x: float
    y: float
    yaw: float


@dataclass
class Rates:
    pose_hz: float = 20.0
    scan_hz: float = 2.0
    detection_hz: float = 10.0


@dataclass
class NoiseModel:
    pixel_sigma: float = 2.0
    depth_sigma: float = 0.02
    miss_prob: float = 0.1
    false_positive_rate: float = 0.0
    score_lo: float = 0.55
    score_hi: float = 0.95
    # systematic range offset; models a depth sensor whose readings disagree
    # with the scan plane (injected, never corrected)
    depth_bias: float = 0.0


@dataclass
class SensorModel:
    max_detection_range: float = 5.0
    depth_sample_count: int = 9
    scan_beams: int = 72
    scan_fov: float = math.tau
    scan_range_min: float = 0.05
    scan_range_max: float = 8.0


@dataclass
class Scenario:
    room: list[Segment]
    objects: list[SceneObject]
    trajectory: list[Waypoint]
    rates: Rates = field(default_factory=Rates)
    noise: NoiseModel = field(default_factory=NoiseModel)
    sensor: SensorModel = field(default_factory=SensorModel)
    seed: int = 0

    def validate(self) -> None:
        if any(len(seg) != 4 for seg in self.room):
            raise ScenarioError("wall segments must be (x1, y1, x2, y2)")
        if not self.trajectory:
            raise ScenarioError("trajectory needs at least one waypoint")
        stamps = [w.stamp for w in self.trajectory]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise ScenarioError("trajectory stamps must be strictly increasing")
        for rate in (self.rates.pose_hz, self.rates.scan_hz, self.rates.detection_hz):
            if rate <= 0:
                raise ScenarioError(f"stream rates must be positive, got {rate}")
        if not 0.0 <= self.noise.miss_prob <= 1.0:
            raise ScenarioError("miss_prob must lie in [0, 1]")
        if self.noise.false_positive_rate < 0.0:
            raise ScenarioError("false_positive_rate must be nonnegative")
        if not 0.0 <= self.noise.score_lo <= self.noise.score_hi <= 1.0:
            raise ScenarioError("score bounds must satisfy 0 <= lo <= hi <= 1")
        if any(o.radius <= 0 for o in self.objects):
            raise ScenarioError("object radii must be positive")
        if self.sensor.scan_beams < 1 or self.sensor.depth_sample_count < 1:
            raise ScenarioError("sensor counts must be at least 1")

    # -- serialization ------------------------------------------------------

    def to_doc(self) -> dict:
        return {
            "format_version": 1,
            "seed": self.seed,
            "room": [list(seg) for seg in self.room],
            "objects": [
                {"class": o.class_label, "position": [o.x, o.y], "radius": o.radius}
                for o in self.objects
            ],
            "trajectory": [
                {"t": w.stamp, "x": w.x, "y": w.y, "yaw": w.yaw} for w in self.trajectory
            ],
            "rates": self.rates.__dict__,
            "noise": self.noise.__dict__,
            "sensor": self.sensor.__dict__,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Scenario":
        try:
            sc = cls(
                room=[tuple(map(float, seg)) for seg in doc.get("room", [])],
                objects=[
                    SceneObject(
                        class_label=str(o["class"]),
                        x=float(o["position"][0]),
                        y=float(o["position"][1]),
                        radius=float(o["radius"]),
                    )
                    for o in doc.get("objects", [])
                ],
                trajectory=[
                    Waypoint(float(w["t"]), float(w["x"]), float(w["y"]), float(w["yaw"]))
                    for w in doc.get("trajectory", [])
                ],
                seed=int(doc.get("seed", 0)),
            )
            for section, target in (
                ("rates", sc.rates),
                ("noise", sc.noise),
                ("sensor", sc.sensor),
            ):
                for key, value in doc.get(section, {}).items():
                    if not hasattr(target, key):
                        raise ScenarioError(f"unknown key '{key}' in '{section}'")
                    setattr(target, key, type(getattr(target, key))(value))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"bad scenario document: {exc}") from exc
        sc.validate()
        return sc

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"scenario {path} is not valid JSON: {exc.msg}") from exc
        return cls.from_doc(doc)

    # -- canned scenes --------------------------------------------------------

    @staticmethod
    def lab_scene(seed: int = 0, duration: float = 60.0) -> "Scenario":
        """The canonical indoor scene: two chairs and two people in one room.

        The robot stands near the room center and turns to face each object
        in sequence, holding long enough to confirm it, then sweeps back.
        """
        objects = [
            SceneObject("chair", 2.5, 1.2, 0.25),
            SceneObject("person", 5.5, 1.5, 0.28),
            SceneObject("chair", 6.0, 4.8, 0.25),
            SceneObject("person", 2.0, 4.5, 0.28),
        ]
        rx, ry = 4.0, 3.0
        bearings = [math.atan2(o.y - ry, o.x - rx) for o in objects]
        schedule = [
            (0.0, bearings[0]),
            (8.0, bearings[0]),
            (12.0, bearings[1]),
            (20.0, bearings[1]),
            (24.0, bearings[2]),
            (32.0, bearings[2]),
            (36.0, bearings[3]),
            (44.0, bearings[3]),
            (52.0, bearings[0]),
            (60.0, bearings[0]),
        ]
        scale = duration / 60.0
        trajectory = [Waypoint(t * scale, rx, ry, yaw) for t, yaw in schedule]
        return Scenario(
            room=[
                (0.0, 0.0, 8.0, 0.0),
                (8.0, 0.0, 8.0, 6.0),
                (8.0, 6.0, 0.0, 6.0),
                (0.0, 6.0, 0.0, 0.0),
            ],
            objects=objects,
            trajectory=trajectory,
            rates=Rates(pose_hz=20.0, scan_hz=0.5, detection_hz=10.0),
            sensor=SensorModel(scan_beams=36),
            seed=seed,
        )

    @staticmethod
    def square_room(seed: int = 0) -> "Scenario":
        """Empty 6 m square room, scanned while spinning once at the center."""
        return Scenario(
            room=[
                (0.0, 0.0, 6.0, 0.0),
                (6.0, 0.0, 6.0, 6.0),
                (6.0, 6.0, 0.0, 6.0),
                (0.0, 6.0, 0.0, 0.0),
            ],
            objects=[],
            trajectory=[
                Waypoint(0.0, 3.0, 3.0, 0.0),
                Waypoint(2.5, 3.0, 3.0, math.pi / 2),
                Waypoint(5.0, 3.0, 3.0, math.pi),
                Waypoint(7.5, 3.0, 3.0, -math.pi / 2),
                Waypoint(10.0, 3.0, 3.0, 0.0),
            ],
            rates=Rates(pose_hz=20.0, scan_hz=2.0, detection_hz=10.0),
            noise=NoiseModel(pixel_sigma=0.0, depth_sigma=0.0, miss_prob=0.0),
            sensor=SensorModel(scan_beams=180),
            seed=seed,
        )


@dataclass(frozen=True)
class GroundTruth:
    objects: tuple[SceneObject, ...]

    def to_doc(self) -> dict:
        return {
            "format_version": 1,
            "objects": [
                {"class": o.class_label, "x": o.x, "y": o.y, "radius": o.radius}
                for o in self.objects
            ],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "GroundTruth":
        return cls(
            objects=tuple(
                SceneObject(
                    class_label=str(o["class"]),
                    x=float(o["x"]),
                    y=float(o["y"]),
                    radius=float(o.get("radius", 0.25)),
                )
                for o in doc["objects"]
            )
        )


# --------------------------------------------------------------------------
# geometry of the scene


def trajectory_pose(waypoints: list[Waypoint], t: float) -> Pose2:
    """Piecewise-linear position, shortest-arc yaw, clamped to the endpoints."""
    if t <= waypoints[0].stamp:
        w = waypoints[0]
        return Pose2(w.x, w.y, w.yaw)
    if t >= waypoints[-1].stamp:
        w = waypoints[-1]
        return Pose2(w.x, w.y, w.yaw)
    stamps = [w.stamp for w in waypoints]
    i = bisect_right(stamps, t)
    a = waypoints[i - 1]
    b = waypoints[i]
    alpha = (t - a.stamp) / (b.stamp - a.stamp)
    return Pose2(
        a.x + alpha * (b.x - a.x),
        a.y + alpha * (b.y - a.y),
        a.yaw + alpha * wrap_angle(b.yaw - a.yaw),
    )


def ray_segment_hit(
    ox: float, oy: float, dx: float, dy: float, seg: Segment
) -> float | None:
    """Distance along the unit ray to the segment, or None if it misses."""
    x1, y1, x2, y2 = seg
    ex = x2 - x1
    ey = y2 - y1
    denom = ex * dy - ey * dx
    if abs(denom) < 1e-12:
        return None  # parallel
    px = x1 - ox
    py = y1 - oy
    t = (ex * py - ey * px) / denom
    s = (dx * py - dy * px) / denom
    if t >= 0.0 and 0.0 <= s <= 1.0:
        return t
    return None


def segment_blocked(
    x0: float, y0: float, x1: float, y1: float, walls: Iterable[Segment]
) -> bool:
    """True when any wall cuts the open segment between the two points."""
    dx = x1 - x0
    dy = y1 - y0
    length = math.hypot(dx, dy)
    if length == 0.0:
        return False
    dx /= length
    dy /= length
    for seg in walls:
        t = ray_segment_hit(x0, y0, dx, dy, seg)
        if t is not None and 1e-9 < t < length - 1e-9:
            return True
    return False


# --------------------------------------------------------------------------
# rendering


def _event_rng(seed: int, *tags) -> random.Random:
    """Independent generator per (seed, tags); draws never leak across events."""
    material = f"{seed}|" + "|".join(str(t) for t in tags)
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _render_scan(sc: Scenario, cfg: RunConfig, stamp: float) -> LaserScan:
    robot = trajectory_pose(sc.trajectory, stamp)
    sensor = pose2_compose(robot, cfg.t_body_lidar)
    sm = sc.sensor
    angle_min = -0.5 * sm.scan_fov
    increment = sm.scan_fov / sm.scan_beams
    ranges = []
    for i in range(sm.scan_beams):
        a = sensor.yaw + angle_min + i * increment
        dx = math.cos(a)
        dy = math.sin(a)
        best = math.inf
        for seg in sc.room:
            t = ray_segment_hit(sensor.x, sensor.y, dx, dy, seg)
            if t is not None and t < best:
                best = t
        if sm.scan_range_min <= best <= sm.scan_range_max:
            ranges.append(best)
        else:
            ranges.append(math.nan)
    return LaserScan(
        stamp=stamp,
        angle_min=angle_min,
        angle_increment=increment,
        range_min=sm.scan_range_min,
        range_max=sm.scan_range_max,
        ranges=tuple(ranges),
    )


def _render_detections(sc: Scenario, cfg: RunConfig, stamp: float, frame_idx: int) -> list[dict]:
    robot = trajectory_pose(sc.trajectory, stamp)
    t_map_cam = compose(pose3_from_pose2(robot), cfg.t_body_cam)
    cam_inv = inverse(t_map_cam)
    cam_x, cam_y, cam_z = t_map_cam.translation
    intr = cfg.intrinsics
    noise = sc.noise
    sm = sc.sensor
    items: list[dict] = []
    for j, obj in enumerate(sc.objects):
        # object centers sit at the camera's height, so a level robot sees
        # them on the horizon row
        px, py, pz = transform_point(cam_inv, (obj.x, obj.y, cam_z))
        if pz <= 0.0:
            continue
        if math.sqrt(px * px + py * py + pz * pz) > sm.max_detection_range:
            continue
        if segment_blocked(cam_x, cam_y, obj.x, obj.y, sc.room):
            continue
        u = intr.fx * px / pz + intr.cx
        v = intr.fy * py / pz + intr.cy
        half_w = intr.fx * obj.radius / pz
        half_h = intr.fy * obj.radius / pz
        # require the whole box in frame: a clipped box would shift its center
        if u - half_w < 0 or u + half_w > intr.width or v - half_h < 0 or v + half_h > intr.height:
            continue
        rng = _event_rng(sc.seed, "det", frame_idx, j)
        if rng.random() < noise.miss_prob:
            continue
        ju = u + rng.gauss(0.0, noise.pixel_sigma)
        jv = v + rng.gauss(0.0, noise.pixel_sigma)
        box = _clamped_box(ju, jv, half_w, half_h, intr.width, intr.height)
        if box is None:
            continue
        samples = [
            max(0, round((pz + noise.depth_bias + rng.gauss(0.0, noise.depth_sigma)) * 1000.0))
            for _ in range(sm.depth_sample_count)
        ]
        items.append(
            {
                "class": obj.class_label,
                "score": rng.uniform(noise.score_lo, noise.score_hi),
                "bbox": list(box),
                "depth_samples_mm": samples,
            }
        )
    items.extend(_render_false_positives(sc, cfg, frame_idx))
    return items


def _render_false_positives(sc: Scenario, cfg: RunConfig, frame_idx: int) -> list[dict]:
    rate = sc.noise.false_positive_rate
    if rate <= 0.0:
        return []
    rng = _event_rng(sc.seed, "fp", frame_idx)
    count = int(rate)
    if rng.random() < rate - count:
        count += 1
    labels = sorted({o.class_label for o in sc.objects}) or ["clutter"]
    intr = cfg.intrinsics
    noise = sc.noise
    items: list[dict] = []
    for k in range(count):
        r = _event_rng(sc.seed, "fp-item", frame_idx, k)
        depth = r.uniform(0.8, sc.sensor.max_detection_range)
        u = r.uniform(0.0, intr.width)
        v = r.uniform(0.3 * intr.height, 0.7 * intr.height)
        half_w = intr.fx * r.uniform(0.10, 0.35) / depth
        half_h = half_w * (intr.fy / intr.fx)
        box = _clamped_box(u, v, half_w, half_h, intr.width, intr.height)
        if box is None:
            continue
        samples = [
            max(0, round((depth + r.gauss(0.0, noise.depth_sigma)) * 1000.0))
            for _ in range(sc.sensor.depth_sample_count)
        ]
        items.append(
            {
                "class": r.choice(labels),
                "score": r.uniform(noise.score_lo, noise.score_hi),
                "bbox": list(box),
                "depth_samples_mm": samples,
            }
        )
    return items


def _clamped_box(
    u: float, v: float, half_w: float, half_h: float, width: int, height: int
) -> tuple[float, float, float, float] | None:
    u0 = max(0.0, u - half_w)
    v0 = max(0.0, v - half_h)
    u1 = min(float(width), u + half_w)
    v1 = min(float(height), v + half_h)
    if u0 >= u1 or v0 >= v1:
        return None
    return (u0, v0, u1, v1)


def synthesize_log(sc: Scenario, cfg: RunConfig) -> tuple[list[str], GroundTruth]:
    """Render the scenario into run-log lines plus its ground truth."""
    sc.validate()
    t0 = sc.trajectory[0].stamp
    t1 = sc.trajectory[-1].stamp
    entries: list[tuple[float, int, str]] = []

    def stamps(hz: float) -> Iterable[float]:
        k = 0
        while True:
            t = t0 + k / hz
            if t > t1 + 1e-9:
                return
            yield t
            k += 1

    for t in stamps(sc.rates.pose_hz):
        pose = pose3_from_pose2(trajectory_pose(sc.trajectory, t))
        entries.append((t, 0, pose_line(t, pose)))
    for t in stamps(sc.rates.scan_hz):
        entries.append((t, 1, scan_line(_render_scan(sc, cfg, t))))
    for frame_idx, t in enumerate(stamps(sc.rates.detection_hz)):
        items = _render_detections(sc, cfg, t, frame_idx)
        if items:  # the detection stream publishes only when detections exist
            entries.append((t, 2, detections_line(t, items)))
    entries.sort(key=lambda e: (e[0], e[1]))
    return [line for _, _, line in entries], GroundTruth(tuple(sc.objects))


# --------------------------------------------------------------------------
# scoring


@dataclass
class ScoreMetrics:
    true_positives: int = 0
    duplicates: int = 0
    false_objects: int = 0
    mean_position_error: float | None = None

    def to_doc(self) -> dict:
        return {
            "format_version": 1,
            "true_positives": self.true_positives,
            "duplicates": self.duplicates,
            "false_objects": self.false_objects,
            "mean_position_error": self.mean_position_error,
        }


def score_run(
    snapshot: ObjectMapSnapshot, truth: GroundTruth, match_radius: float
) -> ScoreMetrics:
    """Greedily match snapshot objects to same-class ground truth.

    Each truth object matches at most once (nearest pairs first); further
    same-class objects inside the radius of a matched truth count as
    duplicates, everything else as false objects.
    """
    pairs = []
    for obj in snapshot.objects:
        for ti, t in enumerate(truth.objects):
            if t.class_label != obj.class_label:
                continue
            d = math.hypot(obj.pose.x - t.x, obj.pose.y - t.y)
            if d <= match_radius:
                pairs.append((d, obj.id, ti))
    pairs.sort()
    matched_truth: set[int] = set()
    matched_obj: set[int] = set()
    errors: list[float] = []
    for d, oid, ti in pairs:
        if oid in matched_obj or ti in matched_truth:
            continue
        matched_obj.add(oid)
        matched_truth.add(ti)
        errors.append(d)
    duplicates = 0
    false_objects = 0
    for obj in snapshot.objects:
        if obj.id in matched_obj:
            continue
        near_matched = any(
            ti in matched_truth
            and truth.objects[ti].class_label == obj.class_label
            and math.hypot(obj.pose.x - truth.objects[ti].x, obj.pose.y - truth.objects[ti].y)
            <= match_radius
            for ti in range(len(truth.objects))
        )
        if near_matched:
            duplicates += 1
        else:
            false_objects += 1
    return ScoreMetrics(
        true_positives=len(errors),
        duplicates=duplicates,
        false_objects=false_objects,
        mean_position_error=(sum(errors) / len(errors)) if errors else None,
    )
