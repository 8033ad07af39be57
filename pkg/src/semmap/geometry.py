"""Rigid-transform algebra and pinhole projection for placing detections on the map.

Conventions:
    - Quaternions are ``(w, x, y, z)``, unit norm, Hamilton product.
    - The camera optical frame has z forward, x right, y down; any other
      mounting is absorbed by the camera-to-body extrinsic.
    - Map-plane poses carry yaw only, always wrapped into ``(-pi, pi]``.
    - All positions are meters, all angles radians.

Everything here is a pure function over immutable values and is safe to call
from any number of concurrent callers.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Sequence

TAU = math.tau

# Rotation taking camera optical axes (z forward, x right, y down) into a
# forward-x / left-y / up-z body frame.
CAMERA_OPTICAL_ROTATION = (0.5, -0.5, 0.5, -0.5)

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]


class NoValidDepth(Exception):
    """Every depth sample for a detection was zero or non-finite."""


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.remainder(angle, TAU)
    if a <= -math.pi:
        a += TAU
    return a


# --------------------------------------------------------------------------
# quaternions


def quat_mul(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_conjugate(q: Quat) -> Quat:
    w, x, y, z = q
    return (w, -x, -y, -z)


def quat_rotate(q: Quat, v: Vec3) -> Vec3:
    """Rotate a vector by a unit quaternion (v' = v + w*t + u x t, t = 2 u x v)."""
    w, x, y, z = q
    vx, vy, vz = v
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return (
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    )


def quat_from_yaw(yaw: float) -> Quat:
    h = 0.5 * yaw
    return (math.cos(h), 0.0, 0.0, math.sin(h))


def yaw_from_quat(q: Quat) -> float:
    w, x, y, z = q
    return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def quat_slerp(q0: Quat, q1: Quat, alpha: float) -> Quat:
    """Shortest-arc spherical interpolation between unit quaternions."""
    dot = q0[0] * q1[0] + q0[1] * q1[1] + q0[2] * q1[2] + q0[3] * q1[3]
    if dot < 0.0:
        q1 = (-q1[0], -q1[1], -q1[2], -q1[3])
        dot = -dot
    if dot > 0.9999995:
        # nearly parallel: linear blend, renormalized
        out = tuple(a + alpha * (b - a) for a, b in zip(q0, q1))
        n = math.sqrt(sum(c * c for c in out))
        return (out[0] / n, out[1] / n, out[2] / n, out[3] / n)
    theta = math.acos(min(1.0, dot))
    s = math.sin(theta)
    c0 = math.sin((1.0 - alpha) * theta) / s
    c1 = math.sin(alpha * theta) / s
    return (
        c0 * q0[0] + c1 * q1[0],
        c0 * q0[1] + c1 * q1[1],
        c0 * q0[2] + c1 * q1[2],
        c0 * q0[3] + c1 * q1[3],
    )


# --------------------------------------------------------------------------
# poses


@dataclass(frozen=True)
class Pose3:
    """Rigid transform: rotation then translation, p' = R(q) p + t."""

    translation: Vec3 = (0.0, 0.0, 0.0)
    rotation: Quat = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        tx, ty, tz = self.translation
        object.__setattr__(self, "translation", (float(tx), float(ty), float(tz)))
        w, x, y, z = self.rotation
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if not math.isfinite(n) or n == 0.0:
            raise ValueError(f"rotation quaternion must be finite and nonzero, got {self.rotation}")
        if abs(n - 1.0) > 1e-12:
            object.__setattr__(self, "rotation", (w / n, x / n, y / n, z / n))
        else:
            object.__setattr__(self, "rotation", (float(w), float(x), float(y), float(z)))

    @classmethod
    def identity(cls) -> "Pose3":
        return cls()


def compose(a: Pose3, b: Pose3) -> Pose3:
    """a∘b: applying the result equals applying b, then a."""
    t = quat_rotate(a.rotation, b.translation)
    ax, ay, az = a.translation
    return Pose3(
        translation=(ax + t[0], ay + t[1], az + t[2]),
        rotation=quat_mul(a.rotation, b.rotation),
    )


def inverse(p: Pose3) -> Pose3:
    qc = quat_conjugate(p.rotation)
    t = quat_rotate(qc, p.translation)
    return Pose3(translation=(-t[0], -t[1], -t[2]), rotation=qc)


def transform_point(p: Pose3, v: Vec3) -> Vec3:
    r = quat_rotate(p.rotation, v)
    tx, ty, tz = p.translation
    return (r[0] + tx, r[1] + ty, r[2] + tz)


@dataclass(frozen=True)
class Pose2:
    """Map-plane pose; yaw is wrapped into (-pi, pi] on construction."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))


def pose2_compose(a: Pose2, b: Pose2) -> Pose2:
    c = math.cos(a.yaw)
    s = math.sin(a.yaw)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.yaw + b.yaw)


def pose2_from_pose3(p: Pose3) -> Pose2:
    """Flatten to the map plane: drop z, keep yaw."""
    tx, ty, _ = p.translation
    return Pose2(tx, ty, yaw_from_quat(p.rotation))


def pose3_from_pose2(p: Pose2) -> Pose3:
    return Pose3(translation=(p.x, p.y, 0.0), rotation=quat_from_yaw(p.yaw))


# --------------------------------------------------------------------------
# camera model and detections


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box, min corner inclusive of the image origin."""

    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self) -> None:
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise ValueError(f"degenerate bbox {(self.u_min, self.v_min, self.u_max, self.v_max)}")
        if self.u_min < 0 or self.v_min < 0:
            raise ValueError("bbox extends past the image origin")

    def center(self) -> tuple[float, float]:
        return (0.5 * (self.u_min + self.u_max), 0.5 * (self.v_min + self.v_max))


def central_subbox(bbox: BBox, fraction: float = 0.5) -> BBox:
    """Centered sub-box with ``fraction`` of the width and height."""
    u, v = bbox.center()
    hw = 0.5 * fraction * (bbox.u_max - bbox.u_min)
    hh = 0.5 * fraction * (bbox.v_max - bbox.v_min)
    return BBox(u - hw, v - hh, u + hw, v + hh)


def subbox_depth_samples(depth_image_m, bbox: BBox, fraction: float = 0.5) -> list[float]:
    """Collect per-pixel depths over the centered sub-box of a full depth image.

    Convenience for full-frame depth sources; run logs already carry the
    sampled sub-box per detection.
    """
    sub = central_subbox(bbox, fraction)
    rows = len(depth_image_m)
    cols = len(depth_image_m[0]) if rows else 0
    u0 = max(0, int(sub.u_min))
    u1 = min(cols - 1, int(sub.u_max))
    v0 = max(0, int(sub.v_min))
    v1 = min(rows - 1, int(sub.v_max))
    out: list[float] = []
    for v in range(v0, v1 + 1):
        row = depth_image_m[v]
        for u in range(u0, u1 + 1):
            out.append(float(row[u]))
    return out


@dataclass(frozen=True)
class Detection2D:
    class_label: str
    score: float
    bbox: BBox

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class MapDetection:
    """A single detection projected onto the map plane (height dropped)."""

    class_label: str
    x: float
    y: float
    yaw: float
    score: float
    stamp: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


def back_project(bbox: BBox, depth_samples_m: Sequence[float], intr: CameraIntrinsics) -> Vec3:
    """Invert the pinhole model at the bbox center.

    The range is the median of the valid (positive, finite) depth samples,
    which are expected to cover the bbox's central sub-box.

    Raises:
        NoValidDepth: no sample is usable; the detection must be dropped.
    """
    valid = [d for d in depth_samples_m if d > 0.0 and math.isfinite(d)]
    if not valid:
        raise NoValidDepth(f"no valid depth among {len(depth_samples_m)} samples")
    z = statistics.median(valid)
    u, v = bbox.center()
    return ((u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z)


def forward_project(point_cam: Vec3, intr: CameraIntrinsics) -> tuple[float, float]:
    """Project an optical-frame point to pixel coordinates."""
    x, y, z = point_cam
    if z <= 0.0:
        raise ValueError(f"point is behind the camera (z={z})")
    return (intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy)


def detection_to_map(
    det: Detection2D,
    point_cam: Vec3,
    t_body_cam: Pose3,
    t_map_body: Pose3,
    stamp: float,
) -> MapDetection:
    """Chain a camera-frame point into the map and flatten it.

    The detection's yaw is the bearing of the robot-to-object ray in the map
    frame (a bbox carries no orientation of its own, and the approach
    direction is what a planner can use).
    """
    p_body = transform_point(t_body_cam, point_cam)
    px, py, _ = transform_point(t_map_body, p_body)
    rx, ry, _ = t_map_body.translation
    return MapDetection(
        class_label=det.class_label,
        x=px,
        y=py,
        yaw=math.atan2(py - ry, px - rx),
        score=det.score,
        stamp=stamp,
    )
