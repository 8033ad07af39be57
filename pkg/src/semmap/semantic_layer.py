"""Detection association and object memory.

Per frame the engine applies, in order: confidence gating, same-frame
duplicate suppression, association of each surviving detection against the
confirmed-object list and then the provisional-track buffer, promotion checks
on every track touched this frame, and pruning of stale tracks.

Confirmed objects are never evicted and their poses never move; repeated
sightings only raise their hit count and statistics. Provisional tracks are
short-lived: they must pass the promotion gate (enough hits, recent enough,
confident enough) before the buffer lets them expire.

Concurrency: the engine is a single-writer state machine — exactly one caller
advances ``process_frame`` at a time. Snapshots are immutable values that can
be handed to any number of concurrent readers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple

from .geometry import MapDetection, Pose2
from .spatial import GridIndex


class NonMonotonicStamp(ValueError):
    """A frame stamp preceded the previous frame's stamp (corrupt log)."""


@dataclass
class LayerConfig:
    """Association and memory settings (meters, seconds).

    ``per_class_cutoff`` overrides the confidence cutoff for specific classes;
    everything else falls back to ``default_cutoff``. Threshold boundaries are
    inclusive throughout: a score equal to the cutoff passes, a distance equal
    to a radius matches.
    """

    per_class_cutoff: dict[str, float] = field(default_factory=dict)
    default_cutoff: float = 0.65
    frame_merge_radius: float = 0.20
    reuse_radius: float = 0.80
    promote_min_hits: int = 10
    promote_window: float = 2.0
    promote_min_mean_score: float = 0.50
    candidate_ttl: float = 3.0

    def __post_init__(self) -> None:
        cutoffs = [self.default_cutoff, *self.per_class_cutoff.values()]
        if any(not 0.0 <= c <= 1.0 for c in cutoffs):
            raise ValueError("confidence cutoffs must lie in [0, 1]")
        if self.frame_merge_radius <= 0 or self.reuse_radius <= 0:
            raise ValueError("radii must be positive")
        if self.promote_min_hits < 1:
            raise ValueError("promote_min_hits must be at least 1")
        if self.promote_window <= 0:
            raise ValueError("promote_window must be positive")
        if not 0.0 <= self.promote_min_mean_score <= 1.0:
            raise ValueError("promote_min_mean_score must lie in [0, 1]")
        if self.candidate_ttl <= 0:
            raise ValueError("candidate_ttl must be positive")

    def cutoff_for(self, class_label: str) -> float:
        return self.per_class_cutoff.get(class_label, self.default_cutoff)


class Hit(NamedTuple):
    stamp: float
    x: float
    y: float
    score: float
    yaw: float


@dataclass
class TrackCandidate:
    """Provisional track accumulating co-located same-class hits."""

    class_label: str
    hits: list[Hit]
    seq: int
    mean_x: float
    mean_y: float

    def recompute_mean(self) -> None:
        sx = 0.0
        sy = 0.0
        for h in self.hits:
            sx += h.x
            sy += h.y
        n = len(self.hits)
        self.mean_x = sx / n
        self.mean_y = sy / n

    @property
    def mean_position(self) -> tuple[float, float]:
        return (self.mean_x, self.mean_y)


@dataclass(frozen=True)
class MapObject:
    """Confirmed object instance; the pose is frozen at promotion."""

    id: int
    class_label: str
    pose: Pose2
    hit_count: int
    mean_score: float
    first_seen: float
    last_seen: float


@dataclass(frozen=True)
class ObjectMapSnapshot:
    """Detached copy of the confirmed objects at one instant."""

    stamp: float
    objects: tuple[MapObject, ...]

    def to_doc(self) -> dict:
        return {
            "format_version": 1,
            "t": self.stamp,
            "objects": [object_doc(o) for o in self.objects],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ObjectMapSnapshot":
        stamp = float(doc["t"])
        objects = tuple(
            MapObject(
                id=int(o["id"]),
                class_label=str(o["class"]),
                pose=Pose2(float(o["x"]), float(o["y"]), float(o["yaw"])),
                hit_count=int(o["hits"]),
                mean_score=float(o["mean_score"]),
                # sighting times are not part of the wire schema
                first_seen=stamp,
                last_seen=stamp,
            )
            for o in doc["objects"]
        )
        return cls(stamp=stamp, objects=objects)


def object_doc(o: MapObject) -> dict:
    return {
        "id": o.id,
        "class": o.class_label,
        "x": o.pose.x,
        "y": o.pose.y,
        "yaw": o.pose.yaw,
        "hits": o.hit_count,
        "mean_score": o.mean_score,
    }


class EventKind(str, enum.Enum):
    DROPPED_LOW_SCORE = "dropped_low_score"
    DROPPED_NO_DEPTH = "dropped_no_depth"
    MERGED_IN_FRAME = "merged_in_frame"
    MATCHED_LONG_TERM = "matched_long_term"
    UPDATED_CANDIDATE = "updated_candidate"
    NEW_CANDIDATE = "new_candidate"
    PROMOTED = "promoted"


@dataclass(frozen=True)
class AssociationEvent:
    """Terminal outcome for one input detection (one event per detection)."""

    kind: EventKind
    stamp: float
    class_label: str
    object_id: int | None = None

    def to_doc(self) -> dict:
        return {
            "format_version": 1,
            "kind": self.kind.value,
            "t": self.stamp,
            "class": self.class_label,
            "object_id": self.object_id,
        }


# --------------------------------------------------------------------------
# stateless stages


def gate_by_confidence(
    dets: Iterable[MapDetection], cfg: LayerConfig
) -> tuple[list[MapDetection], list[MapDetection]]:
    """Split detections into (kept, dropped) by per-class cutoff, order preserved."""
    kept: list[MapDetection] = []
    dropped: list[MapDetection] = []
    for det in dets:
        if det.score >= cfg.cutoff_for(det.class_label):
            kept.append(det)
        else:
            dropped.append(det)
    return kept, dropped


def _merge_split(
    dets: list[MapDetection], cfg: LayerConfig
) -> tuple[list[MapDetection], list[MapDetection]]:
    """Greedy per-class duplicate suppression; returns (survivors, merged away).

    Within each class, detections are visited in descending score (ties:
    smaller x, then y, then input order); one landing within the merge radius
    of an already-kept same-class detection is discarded. Survivors come back
    globally score-descending, which is also the association order.
    """
    if len(dets) <= 1:
        return list(dets), []
    by_class: dict[str, list[tuple[int, MapDetection]]] = {}
    for idx, det in enumerate(dets):
        by_class.setdefault(det.class_label, []).append((idx, det))
    keyed: list[tuple[tuple, MapDetection]] = []
    merged: list[MapDetection] = []
    radius = cfg.frame_merge_radius
    for label in sorted(by_class):
        group = by_class[label]
        group.sort(key=lambda p: (-p[1].score, p[1].x, p[1].y, p[0]))
        if len(group) == 1:
            idx, det = group[0]
            keyed.append(((-det.score, label, det.x, det.y, idx), det))
            continue
        kept_index = GridIndex(radius)
        n_kept = 0
        for idx, det in group:
            if kept_index.nearest(label, det.x, det.y, radius) is not None:
                merged.append(det)
            else:
                kept_index.insert(label, n_kept, det.x, det.y)
                n_kept += 1
                keyed.append(((-det.score, label, det.x, det.y, idx), det))
    keyed.sort(key=lambda p: p[0])
    return [det for _, det in keyed], merged


def merge_in_frame(dets: list[MapDetection], cfg: LayerConfig) -> list[MapDetection]:
    """Suppress near-duplicate same-class detections within one frame."""
    survivors, _ = _merge_split(dets, cfg)
    return survivors


# --------------------------------------------------------------------------
# the engine


class SemanticLayer:
    """Single-writer association engine over short- and long-term memory."""

    def __init__(self, cfg: LayerConfig | None = None):
        self.cfg = cfg if cfg is not None else LayerConfig()
        self._objects: dict[int, MapObject] = {}
        self._object_index = GridIndex(self.cfg.reuse_radius)
        self._candidates: dict[int, TrackCandidate] = {}
        self._candidate_index = GridIndex(self.cfg.reuse_radius)
        self._next_id = 1
        self._next_seq = 0
        self._last_stamp: float | None = None

    # -- state views ------------------------------------------------------

    @property
    def object_count(self) -> int:
        return len(self._objects)

    @property
    def candidate_count(self) -> int:
        return len(self._candidates)

    def candidates(self) -> list[TrackCandidate]:
        return [self._candidates[s] for s in sorted(self._candidates)]

    def snapshot(self, stamp: float) -> ObjectMapSnapshot:
        """Detached, immutable copy of the confirmed objects."""
        return ObjectMapSnapshot(
            stamp=stamp,
            objects=tuple(self._objects[i] for i in sorted(self._objects)),
        )

    def preload(self, objects: Iterable[MapObject]) -> None:
        """Restore confirmed objects, e.g. from a previously saved snapshot.

        Callers are responsible for the loaded set respecting the same-class
        spacing the engine itself maintains.
        """
        for obj in objects:
            if obj.id in self._objects:
                raise ValueError(f"duplicate object id {obj.id}")
            self._objects[obj.id] = obj
            self._object_index.insert(obj.class_label, obj.id, obj.pose.x, obj.pose.y)
            if obj.id >= self._next_id:
                self._next_id = obj.id + 1

    # -- per-detection association -----------------------------------------

    def associate(self, det: MapDetection) -> AssociationEvent:
        """Attribute one gated, merge-surviving detection to memory.

        Confirmed objects are checked first (nearest same-class within the
        reuse radius; distance ties go to the lowest id). A match bumps the
        hit count and statistics but never moves the stored pose. Otherwise
        the nearest provisional track absorbs the hit, or a new track starts.
        """
        event, _ = self._associate(det)
        return event

    def _associate(self, det: MapDetection) -> tuple[AssociationEvent, int | None]:
        radius = self.cfg.reuse_radius
        oid = self._object_index.nearest(det.class_label, det.x, det.y, radius)
        if oid is not None:
            obj = self._objects[oid]
            hit_count = obj.hit_count + 1
            mean_score = obj.mean_score + (det.score - obj.mean_score) / hit_count
            self._objects[oid] = replace(
                obj, hit_count=hit_count, mean_score=mean_score, last_seen=det.stamp
            )
            return (
                AssociationEvent(EventKind.MATCHED_LONG_TERM, det.stamp, det.class_label, oid),
                None,
            )
        hit = Hit(det.stamp, det.x, det.y, det.score, det.yaw)
        seq = self._candidate_index.nearest(det.class_label, det.x, det.y, radius)
        if seq is not None:
            cand = self._candidates[seq]
            cand.hits.append(hit)
            old_x, old_y = cand.mean_x, cand.mean_y
            cand.recompute_mean()
            self._candidate_index.move(det.class_label, seq, old_x, old_y, cand.mean_x, cand.mean_y)
            return (
                AssociationEvent(EventKind.UPDATED_CANDIDATE, det.stamp, det.class_label),
                seq,
            )
        seq = self._next_seq
        self._next_seq += 1
        self._candidates[seq] = TrackCandidate(
            class_label=det.class_label, hits=[hit], seq=seq, mean_x=det.x, mean_y=det.y
        )
        self._candidate_index.insert(det.class_label, seq, det.x, det.y)
        return AssociationEvent(EventKind.NEW_CANDIDATE, det.stamp, det.class_label), seq

    # -- promotion and pruning ----------------------------------------------

    def try_promote(self, cand: TrackCandidate, now: float) -> MapObject | None:
        """Promote a track whose recent window passes the gate.

        Only hits inside ``[now - promote_window, now]`` count, both for the
        hit tally and the mean score. The promoted pose is the mean of those
        hits (yaw from the latest one) and never changes afterwards. If that
        pose lands within the reuse radius of an existing same-class object,
        the window's hits fold into that object instead of creating a
        duplicate.
        """
        cfg = self.cfg
        lo = now - cfg.promote_window
        window = [h for h in cand.hits if h.stamp >= lo]
        if len(window) < cfg.promote_min_hits:
            return None
        sum_score = 0.0
        sum_x = 0.0
        sum_y = 0.0
        for h in window:
            sum_score += h.score
            sum_x += h.x
            sum_y += h.y
        n = len(window)
        mean_score = sum_score / n
        if mean_score < cfg.promote_min_mean_score:
            return None
        px = sum_x / n
        py = sum_y / n
        label = cand.class_label
        self._remove_candidate(cand)
        existing = self._object_index.nearest(label, px, py, cfg.reuse_radius)
        if existing is not None:
            obj = self._objects[existing]
            hit_count = obj.hit_count
            score = obj.mean_score
            for h in window:
                hit_count += 1
                score += (h.score - score) / hit_count
            self._objects[existing] = replace(
                obj,
                hit_count=hit_count,
                mean_score=score,
                last_seen=max(obj.last_seen, window[-1].stamp),
            )
            return None
        oid = self._next_id
        self._next_id += 1
        obj = MapObject(
            id=oid,
            class_label=label,
            pose=Pose2(px, py, window[-1].yaw),
            hit_count=n,
            mean_score=mean_score,
            first_seen=window[0].stamp,
            last_seen=window[-1].stamp,
        )
        self._objects[oid] = obj
        self._object_index.insert(label, oid, px, py)
        return obj

    def prune(self, now: float) -> int:
        """Expire stale provisional tracks; confirmed objects are never pruned.

        Hits older than the promotion window fall off each track; tracks left
        empty, or whose newest hit is older than the candidate TTL, are
        removed. Returns the number of removed tracks.
        """
        cfg = self.cfg
        lo_window = now - cfg.promote_window
        lo_ttl = now - cfg.candidate_ttl
        removed = 0
        for seq in sorted(self._candidates):
            cand = self._candidates[seq]
            hits = cand.hits
            if hits[0].stamp < lo_window:
                hits = [h for h in hits if h.stamp >= lo_window]
            if not hits or hits[-1].stamp < lo_ttl:
                self._remove_candidate(cand)
                removed += 1
            elif len(hits) != len(cand.hits):
                cand.hits = hits
                old_x, old_y = cand.mean_x, cand.mean_y
                cand.recompute_mean()
                self._candidate_index.move(
                    cand.class_label, seq, old_x, old_y, cand.mean_x, cand.mean_y
                )
        return removed

    def _remove_candidate(self, cand: TrackCandidate) -> None:
        del self._candidates[cand.seq]
        self._candidate_index.remove(cand.class_label, cand.seq, cand.mean_x, cand.mean_y)

    # -- frame pipeline ------------------------------------------------------

    def step(self, frame: list[MapDetection], stamp: float) -> list[AssociationEvent]:
        """Run the full per-frame pipeline; returns one terminal event per detection.

        A detection whose hit completes a promotion in this frame reports
        ``PROMOTED`` (with the new object id) instead of its track update.
        """
        if self._last_stamp is not None and stamp < self._last_stamp:
            raise NonMonotonicStamp(
                f"frame stamp {stamp} precedes previous stamp {self._last_stamp}"
            )
        self._last_stamp = stamp
        cfg = self.cfg
        kept, dropped = gate_by_confidence(frame, cfg)
        events = [
            AssociationEvent(EventKind.DROPPED_LOW_SCORE, d.stamp, d.class_label)
            for d in dropped
        ]
        survivors, merged = _merge_split(kept, cfg)
        events += [
            AssociationEvent(EventKind.MERGED_IN_FRAME, d.stamp, d.class_label)
            for d in merged
        ]
        touched: dict[int, int] = {}
        for det in survivors:
            event, seq = self._associate(det)
            events.append(event)
            if seq is not None:
                touched[seq] = len(events) - 1
        for seq in sorted(touched):
            cand = self._candidates.get(seq)
            if cand is None:
                continue
            obj = self.try_promote(cand, stamp)
            if obj is not None:
                i = touched[seq]
                prior = events[i]
                events[i] = AssociationEvent(
                    EventKind.PROMOTED, prior.stamp, prior.class_label, obj.id
                )
        self.prune(stamp)
        return events

    def process_frame(
        self, frame: list[MapDetection], stamp: float
    ) -> tuple[ObjectMapSnapshot, list[AssociationEvent]]:
        """``step`` plus a snapshot of the resulting confirmed-object map."""
        events = self.step(frame, stamp)
        return self.snapshot(stamp), events
