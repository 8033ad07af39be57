"""Run-log format, stream merging, pose interpolation, and replay.

A run log is UTF-8 text, one JSON object per line, carrying three
asynchronous streams discriminated by ``"type"``:

    pose        {"t": s, "type": "pose", "p": [x, y, z], "q": [w, x, y, z]}
    scan        {"t": s, "type": "scan", "angle_min": rad, "angle_increment": rad,
                 "range_min": m, "range_max": m, "ranges": [m or null]}
    detections  {"t": s, "type": "detections", "items": [{"class": str,
                 "score": f, "bbox": [u0, v0, u1, v1], "depth_samples_mm": [int]}]}

Stamps are strictly increasing within each stream; streams may interleave
arbitrarily. Replay merges them by stamp (ties: pose before scan before
detections) and drives the occupancy grid and the semantic layer. Parsing and
processing run sequentially here; the single-writer contract of the engine
and the grid is preserved trivially.
"""

from __future__ import annotations

import json
import math
import time
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import chain
from pathlib import Path
from typing import Callable, Iterable, Iterator, Union

from .geometry import (
    CAMERA_OPTICAL_ROTATION,
    BBox,
    CameraIntrinsics,
    Detection2D,
    NoValidDepth,
    Pose2,
    Pose3,
    back_project,
    detection_to_map,
    pose2_compose,
    pose2_from_pose3,
    quat_slerp,
)
from .occupancy import LaserScan, OccupancyGrid, OccupancyParams, integrate_scan
from .semantic_layer import (
    AssociationEvent,
    EventKind,
    LayerConfig,
    ObjectMapSnapshot,
    SemanticLayer,
)


class MalformedRecord(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class NonMonotonicStream(ValueError):
    def __init__(self, stream: str, stamp: float):
        super().__init__(f"stream '{stream}' is not strictly increasing at t={stamp}")
        self.stream = stream
        self.stamp = stamp


class PoseGapTooLarge(Exception):
    """No buffered pose close enough to the query time; drop the frame or scan."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PoseRecord:
    stamp: float
    pose: Pose3


@dataclass(frozen=True)
class RawDetection:
    class_label: str
    score: float
    bbox: BBox
    depth_samples_m: tuple[float, ...]


@dataclass(frozen=True)
class DetectionFrame:
    stamp: float
    items: tuple[RawDetection, ...]


LogRecord = Union[PoseRecord, LaserScan, DetectionFrame]

# stamp-tie processing order
_PRIORITY = {PoseRecord: 0, LaserScan: 1, DetectionFrame: 2}


# --------------------------------------------------------------------------
# parsing and formatting


def _require(doc: dict, key: str, line_no: int):
    if key not in doc:
        raise MalformedRecord(line_no, f"missing field '{key}'")
    return doc[key]


def _number(value, name: str, line_no: int) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise MalformedRecord(line_no, f"field '{name}' must be a number")
    return float(value)


def parse_log(lines: Iterable[str]) -> Iterator[LogRecord]:
    """Yield records in file order, validating per-stream monotonicity."""
    last: dict[str, float] = {}
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(line_no, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise MalformedRecord(line_no, "record must be a JSON object")
        kind = _require(doc, "type", line_no)
        stamp = _number(_require(doc, "t", line_no), "t", line_no)
        if kind not in ("pose", "scan", "detections"):
            raise MalformedRecord(line_no, f"unknown record type '{kind}'")
        prev = last.get(kind)
        if prev is not None and stamp <= prev:
            raise NonMonotonicStream(kind, stamp)
        last[kind] = stamp
        try:
            if kind == "pose":
                yield _parse_pose(doc, stamp, line_no)
            elif kind == "scan":
                yield _parse_scan(doc, stamp, line_no)
            else:
                yield _parse_detections(doc, stamp, line_no)
        except (ValueError, TypeError) as exc:
            if isinstance(exc, (MalformedRecord, NonMonotonicStream)):
                raise
            raise MalformedRecord(line_no, str(exc)) from exc


def _parse_pose(doc: dict, stamp: float, line_no: int) -> PoseRecord:
    p = _require(doc, "p", line_no)
    q = _require(doc, "q", line_no)
    if not (isinstance(p, list) and len(p) == 3):
        raise MalformedRecord(line_no, "'p' must be [x, y, z]")
    if not (isinstance(q, list) and len(q) == 4):
        raise MalformedRecord(line_no, "'q' must be [w, x, y, z]")
    return PoseRecord(stamp, Pose3(translation=tuple(map(float, p)), rotation=tuple(map(float, q))))


def _parse_scan(doc: dict, stamp: float, line_no: int) -> LaserScan:
    ranges = _require(doc, "ranges", line_no)
    if not isinstance(ranges, list):
        raise MalformedRecord(line_no, "'ranges' must be a list")
    return LaserScan(
        stamp=stamp,
        angle_min=_number(_require(doc, "angle_min", line_no), "angle_min", line_no),
        angle_increment=_number(
            _require(doc, "angle_increment", line_no), "angle_increment", line_no
        ),
        range_min=_number(_require(doc, "range_min", line_no), "range_min", line_no),
        range_max=_number(_require(doc, "range_max", line_no), "range_max", line_no),
        ranges=tuple(math.nan if r is None else float(r) for r in ranges),
    )


def _parse_detections(doc: dict, stamp: float, line_no: int) -> DetectionFrame:
    items = _require(doc, "items", line_no)
    if not isinstance(items, list):
        raise MalformedRecord(line_no, "'items' must be a list")
    parsed = []
    for item in items:
        if not isinstance(item, dict):
            raise MalformedRecord(line_no, "detection items must be objects")
        bbox = _require(item, "bbox", line_no)
        if not (isinstance(bbox, list) and len(bbox) == 4):
            raise MalformedRecord(line_no, "'bbox' must be [u0, v0, u1, v1]")
        samples = _require(item, "depth_samples_mm", line_no)
        if not isinstance(samples, list):
            raise MalformedRecord(line_no, "'depth_samples_mm' must be a list")
        score = _number(_require(item, "score", line_no), "score", line_no)
        parsed.append(
            RawDetection(
                class_label=str(_require(item, "class", line_no)),
                score=score,
                bbox=BBox(*map(float, bbox)),
                depth_samples_m=tuple(float(mm) / 1000.0 for mm in samples),
            )
        )
    return DetectionFrame(stamp, tuple(parsed))


def pose_line(stamp: float, pose: Pose3) -> str:
    return json.dumps(
        {"t": stamp, "type": "pose", "p": list(pose.translation), "q": list(pose.rotation)}
    )


def scan_line(scan: LaserScan) -> str:
    return json.dumps(
        {
            "t": scan.stamp,
            "type": "scan",
            "angle_min": scan.angle_min,
            "angle_increment": scan.angle_increment,
            "range_min": scan.range_min,
            "range_max": scan.range_max,
            "ranges": [None if not math.isfinite(r) else r for r in scan.ranges],
        }
    )


def detections_line(stamp: float, items: list[dict]) -> str:
    """items: [{"class", "score", "bbox", "depth_samples_mm"}] as raw wire values."""
    return json.dumps({"t": stamp, "type": "detections", "items": items})


# --------------------------------------------------------------------------
# pose buffer


class PoseBuffer:
    """Time-indexed pose history with interpolation at query stamps."""

    def __init__(self) -> None:
        self._stamps: list[float] = []
        self._poses: list[Pose3] = []

    def __len__(self) -> int:
        return len(self._stamps)

    def append(self, stamp: float, pose: Pose3) -> None:
        if self._stamps and stamp <= self._stamps[-1]:
            raise NonMonotonicStream("pose", stamp)
        self._stamps.append(stamp)
        self._poses.append(pose)

    def interpolate(self, t: float, max_skew: float) -> Pose3:
        """Pose at time ``t``.

        Between buffered stamps the translation is interpolated linearly and
        the rotation along the shortest arc, provided the bracketing gap is at
        most twice ``max_skew``. Queries past the newest pose hold it for up
        to ``max_skew``. Anything else raises PoseGapTooLarge.
        """
        stamps = self._stamps
        if not stamps:
            raise PoseGapTooLarge(f"no poses buffered at t={t}")
        i = bisect_right(stamps, t)
        if i == len(stamps):
            if t - stamps[-1] <= max_skew:
                return self._poses[-1]
            raise PoseGapTooLarge(f"query t={t} is {t - stamps[-1]:.3f}s past the newest pose")
        if i == 0:
            raise PoseGapTooLarge(f"query t={t} precedes the oldest pose {stamps[0]}")
        t0 = stamps[i - 1]
        if t0 == t:
            return self._poses[i - 1]
        t1 = stamps[i]
        if t1 - t0 > 2.0 * max_skew:
            raise PoseGapTooLarge(f"pose gap {t1 - t0:.3f}s around t={t} exceeds {2 * max_skew}")
        alpha = (t - t0) / (t1 - t0)
        a = self._poses[i - 1]
        b = self._poses[i]
        ax, ay, az = a.translation
        bx, by, bz = b.translation
        return Pose3(
            translation=(
                ax + alpha * (bx - ax),
                ay + alpha * (by - ay),
                az + alpha * (bz - az),
            ),
            rotation=quat_slerp(a.rotation, b.rotation, alpha),
        )


# --------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Everything a replay needs beyond the log: tuning, extrinsics, intrinsics.

    ``snapshot_every`` is the per-frame snapshot cadence handed to sinks
    (0 publishes only the final snapshot).
    """

    layer: LayerConfig = field(default_factory=LayerConfig)
    occupancy: OccupancyParams = field(default_factory=OccupancyParams)
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(
            fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480
        )
    )
    t_body_cam: Pose3 = field(
        default_factory=lambda: Pose3(
            translation=(0.2, 0.0, 0.3), rotation=CAMERA_OPTICAL_ROTATION
        )
    )
    t_body_lidar: Pose2 = field(default_factory=lambda: Pose2(0.1, 0.0, 0.0))
    max_pose_skew: float = 0.05
    snapshot_every: int = 1

    def __post_init__(self) -> None:
        if self.max_pose_skew <= 0:
            raise ConfigError("max_pose_skew must be positive")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be nonnegative")

    @classmethod
    def default(cls) -> "RunConfig":
        return cls()

    @classmethod
    def from_doc(cls, doc: dict) -> "RunConfig":
        """Defaults overridden by the (possibly partial) config document."""
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {
            "layer",
            "occupancy",
            "intrinsics",
            "t_body_cam",
            "t_body_lidar",
            "max_pose_skew",
            "snapshot_every",
        }
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls()
            if "layer" in doc:
                cfg.layer = _merge_dataclass(LayerConfig, doc["layer"], "layer")
            if "occupancy" in doc:
                cfg.occupancy = _merge_dataclass(OccupancyParams, doc["occupancy"], "occupancy")
            if "intrinsics" in doc:
                cfg.intrinsics = _merge_dataclass(
                    CameraIntrinsics, doc["intrinsics"], "intrinsics", base=cfg.intrinsics
                )
            if "t_body_cam" in doc:
                section = doc["t_body_cam"]
                cfg.t_body_cam = Pose3(
                    translation=tuple(map(float, section["p"])),
                    rotation=tuple(map(float, section["q"])),
                )
            if "t_body_lidar" in doc:
                section = doc["t_body_lidar"]
                cfg.t_body_lidar = Pose2(
                    float(section.get("x", 0.0)),
                    float(section.get("y", 0.0)),
                    float(section.get("yaw", 0.0)),
                )
            if "max_pose_skew" in doc:
                cfg.max_pose_skew = float(doc["max_pose_skew"])
            if "snapshot_every" in doc:
                cfg.snapshot_every = int(doc["snapshot_every"])
            cfg.__post_init__()
            return cfg
        except (TypeError, KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config value: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg}") from exc
        return cls.from_doc(doc)


def _merge_dataclass(cls, overrides: dict, section: str, base=None):
    if not isinstance(overrides, dict):
        raise ConfigError(f"section '{section}' must be an object")
    values = dict(base.__dict__) if base is not None else {}
    fields = getattr(cls, "__dataclass_fields__")
    for key, value in overrides.items():
        if key not in fields:
            raise ConfigError(f"unknown key '{key}' in section '{section}'")
        values[key] = value
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in section '{section}': {exc}") from exc


# --------------------------------------------------------------------------
# replay


@dataclass
class ReplaySinks:
    """Optional consumers for the replay's outputs."""

    on_snapshot: Callable[[ObjectMapSnapshot], None] | None = None
    on_event: Callable[[AssociationEvent], None] | None = None


@dataclass
class RunReport:
    poses: int = 0
    scans: int = 0
    detection_frames: int = 0
    detections: int = 0
    dropped_no_depth: int = 0
    dropped_pose_gap_scans: int = 0
    dropped_pose_gap_frames: int = 0
    objects_total: int = 0
    objects_by_class: dict[str, int] = field(default_factory=dict)
    duration_s: float = 0.0

    def to_doc(self, include_duration: bool = True) -> dict:
        doc = {
            "format_version": 1,
            "records": {
                "poses": self.poses,
                "scans": self.scans,
                "detection_frames": self.detection_frames,
                "detections": self.detections,
            },
            "drops": {
                "no_depth": self.dropped_no_depth,
                "pose_gap_scans": self.dropped_pose_gap_scans,
                "pose_gap_frames": self.dropped_pose_gap_frames,
            },
            "objects": {
                "total": self.objects_total,
                "by_class": dict(sorted(self.objects_by_class.items())),
            },
        }
        if include_duration:
            doc["duration_s"] = self.duration_s
        return doc


class ReplaySession:
    """One pass over a log: scans feed the grid, detection frames feed the layer.

    Poses are loaded into the buffer up front, so interpolation can use poses
    that appear later in the file — the natural semantics for offline replay
    of a complete recording.
    """

    def __init__(self, cfg: RunConfig, sinks: ReplaySinks | None = None):
        self.cfg = cfg
        self.sinks = sinks if sinks is not None else ReplaySinks()
        self.layer = SemanticLayer(cfg.layer)
        self.grid: OccupancyGrid | None = None
        self.pose_buffer = PoseBuffer()
        self.final_snapshot: ObjectMapSnapshot | None = None
        self._frames_processed = 0

    def run(self, log: Iterable[str] | Iterable[LogRecord]) -> RunReport:
        records = self._materialize(log)
        report = RunReport()
        started = time.perf_counter()
        for rec in records:
            if type(rec) is PoseRecord:
                self.pose_buffer.append(rec.stamp, rec.pose)
                report.poses += 1
        ordered = sorted(
            ((rec.stamp, _PRIORITY[type(rec)], i, rec) for i, rec in enumerate(records)),
            key=lambda item: item[:3],
        )
        last_stamp = 0.0
        for stamp, _, _, rec in ordered:
            last_stamp = stamp
            kind = type(rec)
            if kind is LaserScan:
                self._handle_scan(rec, report)
            elif kind is DetectionFrame:
                self._handle_frame(rec, report)
        self.final_snapshot = self.layer.snapshot(last_stamp)
        if self.sinks.on_snapshot is not None:
            self.sinks.on_snapshot(self.final_snapshot)
        for obj in self.final_snapshot.objects:
            report.objects_by_class[obj.class_label] = (
                report.objects_by_class.get(obj.class_label, 0) + 1
            )
        report.objects_total = len(self.final_snapshot.objects)
        report.duration_s = time.perf_counter() - started
        return report

    @staticmethod
    def _materialize(log: Iterable[str] | Iterable[LogRecord]) -> list[LogRecord]:
        it = iter(log)
        first = next(it, None)
        if first is None:
            return []
        if isinstance(first, str):
            return list(parse_log(chain([first], it)))
        return [first, *it]

    def _handle_scan(self, scan: LaserScan, report: RunReport) -> None:
        report.scans += 1
        try:
            body = self.pose_buffer.interpolate(scan.stamp, self.cfg.max_pose_skew)
        except PoseGapTooLarge:
            report.dropped_pose_gap_scans += 1
            return
        sensor = pose2_compose(pose2_from_pose3(body), self.cfg.t_body_lidar)
        if self.grid is None:
            res = self.cfg.occupancy.resolution
            cx = math.floor(sensor.x / res)
            cy = math.floor(sensor.y / res)
            self.grid = OccupancyGrid(
                res, origin_x=(cx - 32) * res, origin_y=(cy - 32) * res, width=64, height=64
            )
        integrate_scan(self.grid, sensor, scan, self.cfg.occupancy)

    def _handle_frame(self, frame: DetectionFrame, report: RunReport) -> None:
        report.detection_frames += 1
        report.detections += len(frame.items)
        try:
            t_map_body = self.pose_buffer.interpolate(frame.stamp, self.cfg.max_pose_skew)
        except PoseGapTooLarge:
            report.dropped_pose_gap_frames += 1
            return
        on_event = self.sinks.on_event
        intr = self.cfg.intrinsics
        t_body_cam = self.cfg.t_body_cam
        dets = []
        for item in frame.items:
            try:
                point_cam = back_project(item.bbox, item.depth_samples_m, intr)
            except NoValidDepth:
                report.dropped_no_depth += 1
                if on_event is not None:
                    on_event(
                        AssociationEvent(
                            EventKind.DROPPED_NO_DEPTH, frame.stamp, item.class_label
                        )
                    )
                continue
            dets.append(
                detection_to_map(
                    Detection2D(item.class_label, item.score, item.bbox),
                    point_cam,
                    t_body_cam,
                    t_map_body,
                    frame.stamp,
                )
            )
        events = self.layer.step(dets, frame.stamp)
        if on_event is not None:
            for event in events:
                on_event(event)
        self._frames_processed += 1
        every = self.cfg.snapshot_every
        if every and self._frames_processed % every == 0 and self.sinks.on_snapshot is not None:
            self.sinks.on_snapshot(self.layer.snapshot(frame.stamp))


def replay(
    log: Iterable[str] | Iterable[LogRecord],
    cfg: RunConfig,
    sinks: ReplaySinks | None = None,
) -> RunReport:
    """Drive the pipeline over a parsed or textual run log."""
    return ReplaySession(cfg, sinks).run(log)
