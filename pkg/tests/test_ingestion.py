import json
import math

import pytest

from semmap.geometry import Pose3, pose2_from_pose3, quat_from_yaw
from semmap.ingestion import (
    ConfigError,
    DetectionFrame,
    MalformedRecord,
    NonMonotonicStream,
    PoseBuffer,
    PoseGapTooLarge,
    PoseRecord,
    ReplaySession,
    ReplaySinks,
    RunConfig,
    parse_log,
    pose_line,
    replay,
    scan_line,
)
from semmap.occupancy import LaserScan


def parse_all(lines):
    return list(parse_log(lines))


# -- parsing -------------------------------------------------------------------


def test_parse_pose_record():
    (rec,) = parse_all(['{"t":1.0,"type":"pose","p":[0,0,0],"q":[1,0,0,0]}'])
    assert isinstance(rec, PoseRecord)
    assert rec.stamp == 1.0
    assert rec.pose.rotation == (1.0, 0.0, 0.0, 0.0)


def test_parse_scan_with_null_ranges():
    line = (
        '{"t":2.0,"type":"scan","angle_min":-1.5,"angle_increment":0.1,'
        '"range_min":0.05,"range_max":8.0,"ranges":[1.5,null,2.0]}'
    )
    (rec,) = parse_all([line])
    assert isinstance(rec, LaserScan)
    assert rec.ranges[0] == 1.5
    assert math.isnan(rec.ranges[1])


def test_parse_empty_detection_frame_is_valid():
    (rec,) = parse_all(['{"t":3.0,"type":"detections","items":[]}'])
    assert isinstance(rec, DetectionFrame)
    assert rec.items == ()


def test_parse_detection_items_convert_millimeters():
    line = json.dumps(
        {
            "t": 1.0,
            "type": "detections",
            "items": [
                {
                    "class": "chair",
                    "score": 0.8,
                    "bbox": [10, 10, 20, 20],
                    "depth_samples_mm": [1500, 0, 2000],
                }
            ],
        }
    )
    (rec,) = parse_all([line])
    assert rec.items[0].depth_samples_m == (1.5, 0.0, 2.0)


def test_duplicate_stamp_in_stream_rejected():
    lines = [
        '{"t":1.0,"type":"pose","p":[0,0,0],"q":[1,0,0,0]}',
        '{"t":1.0,"type":"pose","p":[1,0,0],"q":[1,0,0,0]}',
    ]
    with pytest.raises(NonMonotonicStream):
        parse_all(lines)


def test_streams_are_independent():
    lines = [
        '{"t":5.0,"type":"pose","p":[0,0,0],"q":[1,0,0,0]}',
        '{"t":1.0,"type":"detections","items":[]}',  # earlier, different stream
    ]
    assert len(parse_all(lines)) == 2


def test_malformed_json_reports_line_number():
    with pytest.raises(MalformedRecord) as info:
        parse_all(['{"t":1.0,"type":"pose","p":[0,0,0],"q":[1,0,0,0]}', "{nope"])
    assert info.value.line_no == 2


def test_unknown_type_rejected():
    with pytest.raises(MalformedRecord):
        parse_all(['{"t":1.0,"type":"imu"}'])


def test_missing_fields_rejected():
    with pytest.raises(MalformedRecord):
        parse_all(['{"t":1.0,"type":"pose","p":[0,0,0]}'])
    with pytest.raises(MalformedRecord):
        parse_all(['{"type":"pose","p":[0,0,0],"q":[1,0,0,0]}'])


def test_blank_lines_skipped():
    assert parse_all(["", "  ", '{"t":1.0,"type":"detections","items":[]}']) != []


def test_format_round_trip():
    pose = Pose3(translation=(1.0, 2.0, 0.0), rotation=quat_from_yaw(0.5))
    (rec,) = parse_all([pose_line(1.5, pose)])
    assert rec.pose.translation == pose.translation
    scan = LaserScan(2.0, -1.0, 0.1, 0.05, 8.0, (1.0, math.nan))
    (rec,) = parse_all([scan_line(scan)])
    assert rec.angle_min == -1.0
    assert math.isnan(rec.ranges[1])


# -- pose interpolation -----------------------------------------------------------


def buffer_with(*entries):
    buf = PoseBuffer()
    for stamp, x, yaw in entries:
        buf.append(stamp, Pose3(translation=(x, 0.0, 0.0), rotation=quat_from_yaw(yaw)))
    return buf


def test_interpolate_midpoint_translation():
    buf = buffer_with((0.0, 0.0, 0.0), (1.0, 2.0, 0.0))
    pose = buf.interpolate(0.5, max_skew=1.0)
    assert pose.translation[0] == pytest.approx(1.0)


def test_interpolate_shortest_arc_yaw_midpoint():
    buf = buffer_with((0.0, 0.0, 0.0), (1.0, 0.0, math.pi / 2))
    pose = buf.interpolate(0.5, max_skew=1.0)
    assert pose2_from_pose3(pose).yaw == pytest.approx(math.pi / 4)


def test_interpolate_far_beyond_newest_raises():
    buf = buffer_with((0.0, 0.0, 0.0))
    with pytest.raises(PoseGapTooLarge):
        buf.interpolate(0.5, max_skew=0.05)


def test_interpolate_holds_newest_within_skew():
    buf = buffer_with((0.0, 3.0, 0.0))
    assert buf.interpolate(0.04, max_skew=0.05).translation[0] == 3.0


def test_interpolate_rejects_wide_bracketing_gap():
    buf = buffer_with((0.0, 0.0, 0.0), (1.0, 2.0, 0.0))
    with pytest.raises(PoseGapTooLarge):
        buf.interpolate(0.5, max_skew=0.2)  # gap 1.0 > 2 * 0.2


def test_interpolate_exact_stamp_returns_exact_pose():
    buf = buffer_with((0.0, 0.0, 0.1), (1.0, 2.0, 0.7), (2.0, 5.0, 1.1))
    pose = buf.interpolate(1.0, max_skew=0.01)  # gap check must not matter here
    assert pose.translation == (2.0, 0.0, 0.0)
    assert abs(pose2_from_pose3(pose).yaw - 0.7) < 1e-12


def test_interpolate_before_oldest_raises():
    buf = buffer_with((1.0, 0.0, 0.0), (1.1, 1.0, 0.0))
    with pytest.raises(PoseGapTooLarge):
        buf.interpolate(0.5, max_skew=1.0)


# -- config ---------------------------------------------------------------------


def test_config_defaults_embed_layer_settings():
    cfg = RunConfig.default()
    assert cfg.layer.default_cutoff == 0.65
    assert cfg.layer.frame_merge_radius == 0.20
    assert cfg.layer.reuse_radius == 0.80
    assert cfg.layer.promote_min_hits == 10
    assert cfg.layer.promote_window == 2.0
    assert cfg.layer.promote_min_mean_score == 0.50


def test_config_overrides_from_doc():
    cfg = RunConfig.from_doc(
        {"layer": {"reuse_radius": 1.2}, "max_pose_skew": 0.1, "snapshot_every": 0}
    )
    assert cfg.layer.reuse_radius == 1.2
    assert cfg.layer.promote_min_hits == 10  # untouched default
    assert cfg.max_pose_skew == 0.1


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        RunConfig.from_doc({"layeur": {}})
    with pytest.raises(ConfigError):
        RunConfig.from_doc({"layer": {"resue_radius": 1.0}})


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        RunConfig.from_doc({"layer": {"reuse_radius": -1.0}})
    with pytest.raises(ConfigError):
        RunConfig.from_doc({"max_pose_skew": 0.0})


def test_config_load_missing_file():
    with pytest.raises(ConfigError):
        RunConfig.load("/no/such/config.json")


# -- replay ------------------------------------------------------------------------


def pose_lines(n=5, dt=0.1):
    return [
        pose_line(k * dt, Pose3(translation=(0.1 * k, 0.0, 0.0)))
        for k in range(n)
    ]


def test_replay_poses_only():
    report = replay(pose_lines(7), RunConfig.default())
    assert report.poses == 7
    assert report.objects_total == 0
    assert report.scans == 0
    assert report.dropped_no_depth == 0


def test_replay_frames_without_poses_are_dropped():
    lines = [
        json.dumps(
            {
                "t": 10.0 + k,
                "type": "detections",
                "items": [
                    {
                        "class": "chair",
                        "score": 0.9,
                        "bbox": [300, 220, 340, 260],
                        "depth_samples_mm": [2000],
                    }
                ],
            }
        )
        for k in range(3)
    ]
    report = replay(lines, RunConfig.default())
    assert report.dropped_pose_gap_frames == 3
    assert report.objects_total == 0


def test_replay_counts_no_depth_drops():
    lines = pose_lines(3)
    lines.append(
        json.dumps(
            {
                "t": 0.1,
                "type": "detections",
                "items": [
                    {
                        "class": "chair",
                        "score": 0.9,
                        "bbox": [300, 220, 340, 260],
                        "depth_samples_mm": [0, 0],
                    }
                ],
            }
        )
    )
    events = []
    report = replay(lines, RunConfig.default(), ReplaySinks(on_event=events.append))
    assert report.dropped_no_depth == 1
    assert [e.kind.value for e in events] == ["dropped_no_depth"]


def test_replay_uses_poses_appearing_later_in_file():
    # detection frame written before its bracketing pose still interpolates
    lines = [
        pose_line(0.0, Pose3()),
        json.dumps(
            {
                "t": 0.02,
                "type": "detections",
                "items": [
                    {
                        "class": "chair",
                        "score": 0.9,
                        "bbox": [300, 220, 340, 260],
                        "depth_samples_mm": [1800],
                    }
                ],
            }
        ),
        pose_line(0.04, Pose3()),
    ]
    report = replay(lines, RunConfig.default())
    assert report.dropped_pose_gap_frames == 0
    assert report.detection_frames == 1


def test_replay_accepts_parsed_records():
    records = list(parse_log(pose_lines(4)))
    report = replay(records, RunConfig.default())
    assert report.poses == 4


def test_replay_is_deterministic():
    import random

    from semmap.simulator import Scenario, synthesize_log

    cfg = RunConfig.default()
    lines, _ = synthesize_log(Scenario.lab_scene(seed=5, duration=10.0), cfg)

    def run():
        snaps = []
        events = []
        session = ReplaySession(
            RunConfig.default(),
            ReplaySinks(
                on_snapshot=lambda s: snaps.append(json.dumps(s.to_doc())),
                on_event=lambda e: events.append(json.dumps(e.to_doc())),
            ),
        )
        report = session.run(list(lines))
        return snaps, events, json.dumps(report.to_doc(include_duration=False))

    assert run() == run()


def test_replay_snapshot_cadence():
    from semmap.simulator import Scenario, synthesize_log

    cfg = RunConfig.default()
    lines, _ = synthesize_log(Scenario.lab_scene(seed=5, duration=6.0), cfg)
    for every, expect_many in ((1, True), (0, False)):
        cfg_n = RunConfig.from_doc({"snapshot_every": every})
        snaps = []
        replay(list(lines), cfg_n, ReplaySinks(on_snapshot=snaps.append))
        if expect_many:
            assert len(snaps) > 10
        else:
            assert len(snaps) == 1  # only the final snapshot


def test_run_report_doc_shape():
    report = replay(pose_lines(2), RunConfig.default())
    doc = report.to_doc()
    assert doc["format_version"] == 1
    assert doc["records"]["poses"] == 2
    assert "duration_s" in doc
    assert "duration_s" not in report.to_doc(include_duration=False)
