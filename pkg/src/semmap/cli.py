"""Command-line entry points: simulate, replay, score, and serve.

Exit codes: 0 success, 2 config/scenario errors, 3 log or input errors,
4 I/O and bind errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .ingestion import (
    ConfigError,
    MalformedRecord,
    NonMonotonicStream,
    ReplaySession,
    ReplaySinks,
    RunConfig,
)
from .occupancy import ExportError, export_map
from .queryserver import SnapshotStore, serve_queries
from .semantic_layer import NonMonotonicStamp, ObjectMapSnapshot
from .simulator import GroundTruth, Scenario, ScenarioError, score_run, synthesize_log

EXIT_CONFIG = 2
EXIT_LOG = 3
EXIT_IO = 4


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semmap",
        description="Object-level semantic mapping over recorded or synthetic sensor logs.",
    )
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("simulate", help="render a scenario into a run log + ground truth")
    p.add_argument("scenario", nargs="?", help="scenario JSON (default: built-in lab scene)")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--config", default=None, help="run config JSON (intrinsics/extrinsics)")
    p.add_argument("--out", required=True, help="output log path (.jsonl)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("replay", help="replay a run log through the full pipeline")
    p.add_argument("log", help="run log path")
    p.add_argument("--config", default=None, help="run config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("score", help="score a snapshot against ground truth")
    p.add_argument("snapshot", help="snapshot JSON written by replay")
    p.add_argument("truth", help="ground-truth sidecar written by simulate")
    p.add_argument("--match-radius", type=float, default=0.5)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("serve", help="serve LIST/NEAREST/COUNT queries over a snapshot")
    p.add_argument("--snapshot", default=None, help="snapshot JSON to serve (default: empty map)")
    p.add_argument("--addr", default="127.0.0.1:7171", help="host:port to bind")
    p.add_argument(
        "--poll",
        type=float,
        default=0.0,
        help="reload the snapshot file every N seconds (0 = never)",
    )
    p.set_defaults(func=_cmd_serve)
    return parser


def _cmd_simulate(args) -> int:
    try:
        scenario = Scenario.load(args.scenario) if args.scenario else Scenario.lab_scene()
        if args.seed is not None:
            scenario.seed = args.seed
        cfg = RunConfig.load(args.config) if args.config else RunConfig.default()
    except (ScenarioError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    lines, truth = synthesize_log(scenario, cfg)
    out = Path(args.out)
    truth_path = out.with_suffix(".truth.json")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        truth_path.write_text(json.dumps(truth.to_doc(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(lines)} records to {out} (ground truth: {truth_path})")
    return 0


def _cmd_replay(args) -> int:
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig.default()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log_path = Path(args.log)
    try:
        lines = log_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        print(f"log error: cannot read {log_path}: {exc}", file=sys.stderr)
        return EXIT_LOG
    events: list[dict] = []
    session = ReplaySession(cfg, ReplaySinks(on_event=lambda e: events.append(e.to_doc())))
    try:
        report = session.run(lines)
    except (MalformedRecord, NonMonotonicStream, NonMonotonicStamp) as exc:
        print(f"log error in {log_path}: {exc}", file=sys.stderr)
        return EXIT_LOG
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        snapshot_doc = session.final_snapshot.to_doc() if session.final_snapshot else None
        (out / "snapshot.json").write_text(
            json.dumps(snapshot_doc, indent=2) + "\n", encoding="utf-8"
        )
        with (out / "events.jsonl").open("w", encoding="utf-8") as fh:
            for doc in events:
                fh.write(json.dumps(doc) + "\n")
        (out / "report.json").write_text(
            json.dumps(report.to_doc(), indent=2) + "\n", encoding="utf-8"
        )
        if session.grid is not None:
            export_map(session.grid, out / "map")
    except (OSError, ExportError) as exc:
        print(f"i/o error writing outputs under {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(
        f"{report.detection_frames} frames, {report.scans} scans -> "
        f"{report.objects_total} objects ({out})"
    )
    return 0


def _cmd_score(args) -> int:
    try:
        snapshot = ObjectMapSnapshot.from_doc(
            json.loads(Path(args.snapshot).read_text(encoding="utf-8"))
        )
        truth = GroundTruth.from_doc(json.loads(Path(args.truth).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_LOG
    metrics = score_run(snapshot, truth, args.match_radius)
    print(json.dumps(metrics.to_doc()))
    return 0


def _cmd_serve(args) -> int:
    store = SnapshotStore()
    snapshot_path = Path(args.snapshot) if args.snapshot else None

    def load() -> float | None:
        if snapshot_path is None:
            return None
        doc = json.loads(snapshot_path.read_text(encoding="utf-8"))
        store.publish(ObjectMapSnapshot.from_doc(doc))
        return snapshot_path.stat().st_mtime

    try:
        mtime = load()
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_LOG
    try:
        server = serve_queries(store, args.addr)
    except (OSError, ValueError) as exc:
        print(f"bind error on {args.addr}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"serving on {args.addr} (Ctrl-C to stop)")
    try:
        while True:
            time.sleep(args.poll if args.poll > 0 else 3600.0)
            if args.poll > 0 and snapshot_path is not None:
                try:
                    current = snapshot_path.stat().st_mtime
                    if mtime is None or current > mtime:
                        mtime = load()
                except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError):
                    continue  # keep serving the last good snapshot
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
