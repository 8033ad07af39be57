"""Shared helpers for the test suite."""

from __future__ import annotations

import math
import random

from semmap.geometry import MapDetection


def random_frame_stream(
    rng: random.Random, max_objects: int = 5, max_frames: int = 200
) -> list[tuple[list[MapDetection], float]]:
    """A random detection-stream scenario: hotspots plus clutter and duplicates.

    Exercises gating (wide score range), same-frame merging (occasional twin
    detections at one hotspot), candidate drift, promotion, and folding
    (hotspots may sit arbitrarily close together).
    """
    classes = ("chair", "person", "box")
    n_objects = rng.randint(1, max_objects)
    n_frames = rng.randint(20, max_frames)
    hotspots = []
    for _ in range(n_objects):
        while True:
            x = rng.uniform(-8.0, 8.0)
            y = rng.uniform(-8.0, 8.0)
            if all(math.hypot(x - hx, y - hy) > 0.3 for hx, hy, _ in hotspots):
                break
        hotspots.append((x, y, rng.choice(classes)))
    frames = []
    for k in range(n_frames):
        stamp = 0.1 * k
        dets: list[MapDetection] = []
        for hx, hy, label in hotspots:
            if rng.random() < 0.75:
                dets.append(
                    MapDetection(
                        class_label=label,
                        x=hx + rng.gauss(0.0, 0.05),
                        y=hy + rng.gauss(0.0, 0.05),
                        yaw=rng.uniform(-math.pi, math.pi),
                        score=rng.uniform(0.3, 1.0),
                        stamp=stamp,
                    )
                )
                if rng.random() < 0.15:  # same-frame near-duplicate
                    dets.append(
                        MapDetection(
                            class_label=label,
                            x=hx + rng.gauss(0.0, 0.05),
                            y=hy + rng.gauss(0.0, 0.05),
                            yaw=rng.uniform(-math.pi, math.pi),
                            score=rng.uniform(0.3, 1.0),
                            stamp=stamp,
                        )
                    )
        if rng.random() < 0.3:  # clutter far from everything
            dets.append(
                MapDetection(
                    class_label=rng.choice(classes),
                    x=rng.uniform(-9.0, 9.0),
                    y=rng.uniform(-9.0, 9.0),
                    yaw=0.0,
                    score=rng.uniform(0.3, 1.0),
                    stamp=stamp,
                )
            )
        frames.append((dets, stamp))
    return frames
