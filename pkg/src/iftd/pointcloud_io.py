"""Point cloud and pose file ingestion.

Readers for KITTI velodyne binaries and whitespace xyz text, pose files in
the KITTI 12-column and TUM 8-column layouts, and accumulation of
consecutive scans into a single keyframe cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

KITTI_RECORD_BYTES = 16  # little-endian float32 (x, y, z, intensity)
ROTATION_TOL = 1e-6

SCAN_FORMATS = ("kitti_bin", "xyz_text")
POSE_FORMATS = ("kitti_12col", "tum_8col")


@dataclass
class PointCloud:
    """Metric 3D points of one LiDAR frame; ``points`` is (N, 3) float64."""

    points: np.ndarray
    frame_id: int = 0

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class PoseRecord:
    """World pose of one frame: x_world = rotation @ x_sensor + translation."""

    frame_id: int
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)


def load_scan(path, scan_format: str = "kitti_bin", frame_id: int = 0) -> PointCloud:
    """Load one scan; non-finite points are dropped, intensity is discarded."""
    path = Path(path)
    if scan_format == "kitti_bin":
        raw = path.read_bytes()
        if len(raw) % KITTI_RECORD_BYTES:
            raise FormatError(
                f"{path}: {len(raw)} bytes is not a multiple of the "
                f"{KITTI_RECORD_BYTES}-byte point record"
            )
        pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)[:, :3].astype(np.float64)
    elif scan_format == "xyz_text":
        rows = []
        for ln, line in enumerate(path.read_text().splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            cols = body.split()
            if len(cols) != 3:
                raise FormatError(f"{path}:{ln}: expected 3 columns, got {len(cols)}")
            try:
                rows.append([float(c) for c in cols])
            except ValueError:
                raise FormatError(f"{path}:{ln}: non-numeric coordinate") from None
        pts = np.array(rows, dtype=np.float64).reshape(-1, 3)
    else:
        raise ValueError(f"unknown scan format {scan_format!r}")
    return PointCloud(pts[np.isfinite(pts).all(axis=1)], frame_id=frame_id)


def save_scan(cloud: PointCloud, path) -> None:
    """Write xyz text with full float64 round-trip precision."""
    np.savetxt(path, cloud.points, fmt="%.17g")


def _check_rotation(rotation: np.ndarray, path: Path, line_no: int) -> None:
    err = np.abs(rotation @ rotation.T - np.eye(3)).max()
    det = np.linalg.det(rotation)
    if err > ROTATION_TOL or abs(det - 1.0) > ROTATION_TOL:
        raise ValidationError(
            f"{path}:{line_no}: rotation not orthonormal "
            f"(|RR^T - I| = {err:.2e}, det = {det:.6f})"
        )


def _quat_to_matrix(qx: float, qy: float, qz: float, qw: float) -> np.ndarray:
    x, y, z, w = qx, qy, qz, qw
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def load_poses(path, pose_format: str = "kitti_12col") -> list[PoseRecord]:
    """Load a pose file.

    kitti_12col rows are row-major 3x4 [R|t] and get frame ids 0..n-1 in file
    order; tum_8col rows are "timestamp tx ty tz qx qy qz qw" and get frame
    ids 0..n-1 in timestamp order.
    """
    path = Path(path)
    if pose_format not in POSE_FORMATS:
        raise ValueError(f"unknown pose format {pose_format!r}")
    parsed = []
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        cols = body.split()
        if pose_format == "kitti_12col":
            if len(cols) != 12:
                raise FormatError(f"{path}:{ln}: expected 12 columns, got {len(cols)}")
            mat = np.array([float(c) for c in cols]).reshape(3, 4)
            rotation, translation = mat[:, :3], mat[:, 3]
            _check_rotation(rotation, path, ln)
            parsed.append((float(len(parsed)), rotation, translation))
        else:
            if len(cols) != 8:
                raise FormatError(f"{path}:{ln}: expected 8 columns, got {len(cols)}")
            ts, tx, ty, tz, qx, qy, qz, qw = (float(c) for c in cols)
            rotation = _quat_to_matrix(qx, qy, qz, qw)
            _check_rotation(rotation, path, ln)
            parsed.append((ts, rotation, np.array([tx, ty, tz])))
    parsed.sort(key=lambda rec: rec[0])
    return [
        PoseRecord(frame_id, rotation, translation)
        for frame_id, (_, rotation, translation) in enumerate(parsed)
    ]


def accumulate_keyframe(
    scans: list[PointCloud], poses: list[PoseRecord], stride: int | None = None
) -> PointCloud:
    """Merge consecutive scans into the frame of the first scan.

    Each scan is mapped through the relative pose inv(T_first) @ T_i, so the
    result is invariant to any common world-frame transform of the poses.
    The keyframe id is the first scan id divided by ``stride`` (defaults to
    the number of scans, i.e. the grouping used by the caller).
    """
    if len(scans) != len(poses):
        raise ValueError(f"{len(scans)} scans but {len(poses)} poses")
    if not scans:
        raise ValueError("cannot accumulate an empty scan group")
    if stride is None:
        stride = len(scans)
    rot0, t0 = poses[0].rotation, poses[0].translation
    merged = []
    for scan, pose in zip(scans, poses):
        rel_rot = rot0.T @ pose.rotation
        rel_t = rot0.T @ (pose.translation - t0)
        merged.append(scan.points @ rel_rot.T + rel_t)
    return PointCloud(np.concatenate(merged), frame_id=scans[0].frame_id // stride)
