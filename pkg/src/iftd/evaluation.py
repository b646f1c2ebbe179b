"""End-to-end sequence driver: keyframes, loop detection, PR metrics, reports.

One pass over the sequence accumulates keyframes, runs extraction
(projection, keypoints, descriptors) and query (candidate search plus
verification) per keyframe, and records the best gate-passing candidate.
Precision/recall curves are computed afterwards from the stored similarity
scores, so a threshold sweep never re-runs the pipeline.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bev import BevImage, project
from .config import EvalConfig
from .database import DescriptorDatabase
from .errors import ValidationError
from .keypoints import detect_keypoints
from .pointcloud_io import accumulate_keyframe, load_poses, load_scan
from .triangles import build_descriptors
from .verification import PoseTransform, verify

_SCAN_GLOBS = {"kitti_bin": ("*.bin",), "xyz_text": ("*.xyz", "*.txt")}

LOOPS_HEADER = [
    "query_kf", "match_kf", "F", "yaw_rad", "tx", "ty", "tz",
    "extraction_ms", "query_ms", "total_ms",
]


@dataclass
class LoopResult:
    """One detection: best candidate for a query keyframe after the gates."""

    query_frame: int
    match_frame: int
    transform: PoseTransform
    similarity: float
    extraction_ms: float
    query_ms: float
    total_ms: float
    accepted: bool = True
    is_true_positive: bool | None = None


@dataclass
class PrPoint:
    threshold: float
    precision: float
    recall: float
    f1: float


@dataclass
class TimingSummary:
    extraction_ms: list[float] = field(default_factory=list)
    query_ms: list[float] = field(default_factory=list)
    total_ms: list[float] = field(default_factory=list)

    def stats(self) -> list[tuple[str, int, float, float, float]]:
        rows = []
        for stage in ("extraction_ms", "query_ms", "total_ms"):
            vals = getattr(self, stage)
            if vals:
                rows.append(
                    (stage[:-3], len(vals), float(np.mean(vals)),
                     float(np.median(vals)), float(np.max(vals)))
                )
            else:
                rows.append((stage[:-3], 0, 0.0, 0.0, 0.0))
        return rows


@dataclass
class RunResult:
    loops: list[LoopResult]            # detections accepted at the configured sim threshold
    detections: list[LoopResult]       # every gate-passing winner, for threshold sweeps
    pr_points: list[PrPoint]
    timing: TimingSummary
    opportunities: int
    keyframe_count: int


def _list_scans(config: EvalConfig) -> list[Path]:
    root = Path(config.dataset_root)
    if not root.is_dir():
        raise ValidationError(f"dataset_root {root} is not a directory")
    paths: list[Path] = []
    for pattern in _SCAN_GLOBS[config.scan_format]:
        paths.extend(root.glob(pattern))
    return sorted(paths)


def count_opportunities(
    positions: np.ndarray, exclusion_window: int, distance_threshold: float
) -> int:
    """Query keyframes with at least one eligible prior within the threshold."""
    positions = np.asarray(positions, dtype=np.float64)
    count = 0
    for q in range(len(positions)):
        limit = q - exclusion_window
        if limit < 0:
            continue
        dists = np.linalg.norm(positions[: limit + 1] - positions[q], axis=1)
        if (dists <= distance_threshold).any():
            count += 1
    return count


def run_sequence(config: EvalConfig, clock=time.perf_counter) -> RunResult:
    """Run the full loop-detection pipeline over one dataset.

    ``clock`` exists so tests can inject a deterministic timer; everything
    else in the pipeline is deterministic for fixed inputs and config.
    """
    scan_paths = _list_scans(config)
    if not scan_paths:
        raise ValidationError(f"no {config.scan_format} scans under {config.dataset_root}")
    poses = load_poses(config.pose_file, config.pose_format)
    if len(poses) < len(scan_paths):
        raise ValidationError(
            f"{len(scan_paths)} scans but only {len(poses)} poses in {config.pose_file}"
        )

    stride = config.keyframe_stride
    db = DescriptorDatabase(
        side_resolution=config.database.side_resolution,
        probe_neighbors=config.database.probe_neighbors,
    )
    images: dict[int, BevImage] = {}
    kf_positions: list[np.ndarray] = []
    detections: list[LoopResult] = []
    timing = TimingSummary()

    for start in range(0, len(scan_paths), stride):
        group = range(start, min(start + stride, len(scan_paths)))
        scans = [
            load_scan(scan_paths[i], config.scan_format, frame_id=i) for i in group
        ]
        keyframe = accumulate_keyframe(scans, [poses[i] for i in group], stride=stride)
        kf_positions.append(poses[group.start].translation)

        t_start = clock()
        image = project(keyframe, config.bev)
        keypoints = detect_keypoints(image, config.keypoints)
        descriptors = build_descriptors(keypoints, config.bev, keyframe.frame_id, config.knn)
        t_mid = clock()

        candidates = db.query_candidates(
            descriptors, config.database.exclusion_window, config.database.top_k
        )
        winner: LoopResult | None = None
        for cand in candidates:
            result = verify(image, images[cand.frame_id], cand, config.verification)
            if result.dnum_max > config.verification.min_triangle_matches and (
                result.vnum_max > config.verification.min_vertex_count
            ):
                # similarity ties go to the older candidate frame
                if (
                    winner is None
                    or result.similarity > winner.similarity
                    or (
                        result.similarity == winner.similarity
                        and cand.frame_id < winner.match_frame
                    )
                ):
                    winner = LoopResult(
                        keyframe.frame_id, cand.frame_id, result.transform,
                        result.similarity, 0.0, 0.0, 0.0, accepted=result.accepted,
                    )
        t_end = clock()

        db.insert_frame(descriptors, frame_id=keyframe.frame_id)
        images[keyframe.frame_id] = image

        extraction = (t_mid - t_start) * 1000.0
        query = (t_end - t_mid) * 1000.0
        timing.extraction_ms.append(extraction)
        timing.query_ms.append(query)
        timing.total_ms.append(extraction + query)
        if winner is not None:
            winner.extraction_ms = extraction
            winner.query_ms = query
            winner.total_ms = extraction + query
            detections.append(winner)

    positions = np.array(kf_positions)
    for det in detections:
        dist = float(np.linalg.norm(positions[det.query_frame] - positions[det.match_frame]))
        det.is_true_positive = dist <= config.gt_distance_threshold
    opportunities = count_opportunities(
        positions, config.database.exclusion_window, config.gt_distance_threshold
    )
    pr_points = compute_pr(
        [(d.similarity, bool(d.is_true_positive)) for d in detections],
        opportunities,
        config.sweep,
    )
    loops = [d for d in detections if d.accepted]
    return RunResult(loops, detections, pr_points, timing, opportunities, len(kf_positions))


def compute_pr(detections, opportunities: int, thresholds) -> list[PrPoint]:
    """PR points over score thresholds.

    ``detections`` is a list of (score, is_true_positive). Precision over
    zero detections and recall over zero opportunities are reported as NaN;
    f1 is 0 whenever precision + recall is not a positive number.
    """
    if opportunities < 0:
        raise ValueError("opportunities must be non-negative")
    points = []
    for threshold in thresholds:
        kept = [tp for score, tp in detections if score >= threshold]
        n_det = len(kept)
        n_tp = sum(kept)
        precision = n_tp / n_det if n_det else math.nan
        recall = n_tp / opportunities if opportunities else math.nan
        if precision + recall > 0:  # False for NaN operands
            f1 = 2.0 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        points.append(PrPoint(float(threshold), precision, recall, f1))
    return points


def recompute_pr(
    records,
    kf_positions: np.ndarray,
    exclusion_window: int,
    gt_distance_threshold: float,
    thresholds,
) -> list[PrPoint]:
    """PR from previously emitted (query_kf, match_kf, F) rows plus poses."""
    positions = np.asarray(kf_positions, dtype=np.float64)
    labeled = []
    for query_kf, match_kf, score in records:
        if not (0 <= match_kf < len(positions) and 0 <= query_kf < len(positions)):
            raise ValidationError(
                f"loop ({query_kf}, {match_kf}) outside the pose range"
            )
        dist = float(np.linalg.norm(positions[query_kf] - positions[match_kf]))
        labeled.append((score, dist <= gt_distance_threshold))
    opportunities = count_opportunities(positions, exclusion_window, gt_distance_threshold)
    return compute_pr(labeled, opportunities, thresholds)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _loop_row(loop: LoopResult) -> list:
    return [
        loop.query_frame,
        loop.match_frame,
        repr(loop.similarity),
        repr(loop.transform.yaw),
        repr(loop.transform.translation[0]),
        repr(loop.transform.translation[1]),
        repr(loop.transform.translation[2]),
        repr(loop.extraction_ms),
        repr(loop.query_ms),
        repr(loop.total_ms),
    ]


def emit_reports(
    loops: list[LoopResult],
    pr_points: list[PrPoint],
    timing: TimingSummary,
    out_dir,
    detections: list[LoopResult] | None = None,
) -> None:
    """Write loops.csv, pr_curve.csv, timing.csv and summary.txt.

    ``detections.csv`` (same columns as loops.csv, every gate-passing
    winner) is written too when provided; it is what `iftd pr` wants for a
    full threshold sweep.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "loops.csv", LOOPS_HEADER, (_loop_row(l) for l in loops))
    _write_csv(
        out / "pr_curve.csv",
        ["threshold", "precision", "recall", "f1"],
        (
            [repr(p.threshold), repr(p.precision), repr(p.recall), repr(p.f1)]
            for p in pr_points
        ),
    )
    _write_csv(
        out / "timing.csv",
        ["stage", "keyframes", "mean_ms", "median_ms", "max_ms"],
        (
            [stage, count, f"{mean:.3f}", f"{median:.3f}", f"{mx:.3f}"]
            for stage, count, mean, median, mx in timing.stats()
        ),
    )
    if detections is not None:
        _write_csv(
            out / "detections.csv", LOOPS_HEADER, (_loop_row(d) for d in detections)
        )
    best = max(pr_points, key=lambda p: p.f1, default=None)
    with open(out / "summary.txt", "w") as fh:
        fh.write(f"keyframes processed: {len(timing.total_ms)}\n")
        fh.write(f"accepted loops: {len(loops)}\n")
        if detections is not None:
            fh.write(f"gate-passing detections: {len(detections)}\n")
        if best is not None:
            fh.write(
                f"best sweep point: threshold={best.threshold} precision={best.precision:.4f} "
                f"recall={best.recall:.4f} f1={best.f1:.4f}\n"
            )
        for stage, count, mean, median, mx in timing.stats():
            fh.write(
                f"{stage}: mean {mean:.2f} ms, median {median:.2f} ms, max {mx:.2f} ms "
                f"over {count} keyframes\n"
            )
