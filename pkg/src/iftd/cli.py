"""Command line interface.

Subcommands:
  run       full pipeline over a dataset, writing CSV reports
  pr        recompute a PR curve from a previous run's loop CSV and poses
  dump-bev  project one scan and write the BEV image as a PGM

Exit codes: 0 ok, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .bev import BevConfig, project, write_pgm
from .config import DEFAULT_SWEEP, load_config
from .database import DEFAULT_EXCLUSION_WINDOW
from .errors import ConfigError, FormatError, IftdError, ValidationError
from .evaluation import PrPoint, emit_reports, recompute_pr, run_sequence
from .pointcloud_io import load_poses, load_scan

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    result = run_sequence(config)
    emit_reports(
        result.loops, result.pr_points, result.timing, args.out,
        detections=result.detections,
    )
    best = max(result.pr_points, key=lambda p: p.f1, default=None)
    print(
        f"{result.keyframe_count} keyframes, {len(result.loops)} accepted loops, "
        f"{result.opportunities} loop opportunities"
    )
    if best is not None:
        print(
            f"best sweep point: threshold={best.threshold} "
            f"precision={best.precision:.4f} recall={best.recall:.4f} f1={best.f1:.4f}"
        )
    print(f"reports written to {Path(args.out).resolve()}")
    return EXIT_OK


def _read_loop_rows(path: Path) -> list[tuple[int, int, float]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"query_kf", "match_kf", "F"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FormatError(f"{path}: expected columns {sorted(required)}")
        for record in reader:
            rows.append(
                (int(record["query_kf"]), int(record["match_kf"]), float(record["F"]))
            )
    return rows


def _cmd_pr(args: argparse.Namespace) -> int:
    rows = _read_loop_rows(Path(args.loops))
    poses = load_poses(args.poses, args.pose_format)
    positions = np.array([p.translation for p in poses])[:: args.stride]
    sweep = (
        tuple(float(t) for t in args.sweep.replace(",", " ").split())
        if args.sweep
        else DEFAULT_SWEEP
    )
    points = recompute_pr(
        rows, positions, args.exclusion_window, args.gt_distance, sweep
    )
    lines = _pr_lines(points)
    if args.out:
        Path(args.out).write_text("".join(lines))
        print(f"pr curve written to {args.out}")
    else:
        sys.stdout.write("".join(lines))
    return EXIT_OK


def _pr_lines(points: list[PrPoint]) -> list[str]:
    lines = ["threshold,precision,recall,f1\n"]
    for p in points:
        lines.append(f"{p.threshold!r},{p.precision!r},{p.recall!r},{p.f1!r}\n")
    return lines


def _cmd_dump_bev(args: argparse.Namespace) -> int:
    scan_format = args.format
    if scan_format == "auto":
        scan_format = "kitti_bin" if Path(args.scan).suffix == ".bin" else "xyz_text"
    bev = BevConfig() if args.config is None else load_config(args.config).bev
    cloud = load_scan(args.scan, scan_format)
    write_pgm(project(cloud, bev), args.out)
    print(f"BEV image written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iftd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run loop detection over a dataset")
    run.add_argument("--config", required=True, help="key=value config file")
    run.add_argument("--out", required=True, help="output directory for reports")
    run.set_defaults(func=_cmd_run)

    pr = sub.add_parser("pr", help="recompute a PR curve from a loops CSV")
    pr.add_argument("--loops", required=True, help="loops.csv or detections.csv")
    pr.add_argument("--poses", required=True, help="pose file for ground truth")
    pr.add_argument("--pose-format", default="kitti_12col",
                    choices=("kitti_12col", "tum_8col"))
    pr.add_argument("--stride", type=int, default=5,
                    help="keyframe stride used during the run")
    pr.add_argument("--exclusion-window", type=int, default=DEFAULT_EXCLUSION_WINDOW)
    pr.add_argument("--gt-distance", type=float, default=15.0)
    pr.add_argument("--sweep", default=None, help="comma-separated thresholds")
    pr.add_argument("--out", default=None, help="output csv (default stdout)")
    pr.set_defaults(func=_cmd_pr)

    dump = sub.add_parser("dump-bev", help="write one scan's BEV image as PGM")
    dump.add_argument("--scan", required=True)
    dump.add_argument("--out", required=True)
    dump.add_argument("--format", default="auto",
                      choices=("auto", "kitti_bin", "xyz_text"))
    dump.add_argument("--config", default=None,
                      help="optional config file for BEV parameters")
    dump.set_defaults(func=_cmd_dump_bev)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, ValidationError, IftdError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
