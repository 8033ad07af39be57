"""Object-level semantic mapping over replayed sensor logs.

Detections from recorded (or synthesized) camera frames are back-projected
through depth, placed on a global 2D map, de-duplicated per frame, and
associated into persistent object instances backed by short- and long-term
memory, anchored to a log-odds occupancy grid built from the same log.
"""

from .geometry import (
    BBox,
    CameraIntrinsics,
    Detection2D,
    MapDetection,
    NoValidDepth,
    Pose2,
    Pose3,
    back_project,
    compose,
    detection_to_map,
    forward_project,
    inverse,
    transform_point,
)
from .ingestion import (
    ConfigError,
    DetectionFrame,
    MalformedRecord,
    NonMonotonicStream,
    PoseBuffer,
    PoseGapTooLarge,
    PoseRecord,
    RawDetection,
    ReplaySession,
    ReplaySinks,
    RunConfig,
    RunReport,
    parse_log,
    replay,
)
from .occupancy import (
    LaserScan,
    OccupancyGrid,
    OccupancyParams,
    classify,
    export_map,
    integrate_scan,
)
from .queryserver import QueryServer, SnapshotStore, serve_queries
from .semantic_layer import (
    AssociationEvent,
    EventKind,
    LayerConfig,
    MapObject,
    NonMonotonicStamp,
    ObjectMapSnapshot,
    SemanticLayer,
    TrackCandidate,
    gate_by_confidence,
    merge_in_frame,
)
from .simulator import (
    GroundTruth,
    Scenario,
    ScenarioError,
    SceneObject,
    ScoreMetrics,
    Waypoint,
    score_run,
    synthesize_log,
)

__version__ = "0.1.0"
