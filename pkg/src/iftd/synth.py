"""Synthetic scenes and trajectories for tests and benchmarks.

Scenes are sensor-frame point clouds built from a noisy ground disk,
vertical pillars, and short wall segments; they raster into BEV images with
strong, repeatable corners. Sequences visit a row of per-location scenes
and can replay them (optionally reversed, with noise) to create loops.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .pointcloud_io import PointCloud, PoseRecord


def make_scene(
    rng: np.random.Generator,
    n_pillars: int = 24,
    n_walls: int = 4,
    radius: float = 28.0,
    ground_extent: float = 42.0,
    ground_step: float = 0.2,
) -> np.ndarray:
    """One sensor-frame scene as an (N, 3) array.

    Built so the BEV projection has clean structure: the ground is sampled
    at one point per bin (constant value, zero gradient, no shared lattice
    of keypoints between frames), walls are sampled below bin pitch so only
    their endpoints are corners, and pillars are single-bin columns. The
    ground sits mid-layer so centimeter noise never flips occupancy bits,
    and extends past the default sensing square so its edge is invisible.
    """
    pts = []
    # half-step offset keeps ground samples at bin centers (a sample sitting
    # exactly on a bin edge would leave holes on one side of it)
    grid = np.arange(-ground_extent + ground_step / 2, ground_extent, ground_step)
    gx, gy = np.meshgrid(grid, grid)
    ground = np.stack([gx.ravel(), gy.ravel()], axis=1)
    gz = 0.25 + rng.normal(0.0, 0.02, len(ground))
    pts.append(np.column_stack([ground, gz]))

    for _ in range(n_pillars):
        ang = rng.uniform(0.0, 2.0 * np.pi)
        dist = rng.uniform(6.0, radius - 2.0)
        cx, cy = dist * np.cos(ang), dist * np.sin(ang)
        height = rng.uniform(4.0, 10.0)
        zs = np.arange(0.25, height, 0.25)
        jitter = rng.normal(0.0, 0.02, (len(zs), 2))
        pts.append(np.column_stack([cx + jitter[:, 0], cy + jitter[:, 1], zs]))

    for _ in range(n_walls):
        ang = rng.uniform(0.0, 2.0 * np.pi)
        dist = rng.uniform(8.0, radius - 4.0)
        cx, cy = dist * np.cos(ang), dist * np.sin(ang)
        heading = rng.uniform(0.0, np.pi)
        length = rng.uniform(6.0, 12.0)
        along = np.arange(-length / 2.0, length / 2.0, 0.1)
        wx = cx + along * np.cos(heading)
        wy = cy + along * np.sin(heading)
        for z in np.arange(0.25, 2.75, 0.5):
            pts.append(np.column_stack([wx, wy, np.full(len(along), z)]))

    return np.concatenate(pts)


def make_replay_sequence(
    n_locations: int = 36,
    spacing: float = 20.0,
    base_seed: int = 7,
    noise_sigma: float = 0.0,
    pose_jitter: float = 0.0,
    reverse_revisit: bool = False,
    scene_kwargs: dict | None = None,
) -> tuple[list[PointCloud], list[PoseRecord]]:
    """Two passes over a row of scenes; the second pass revisits every site.

    Locations sit ``spacing`` meters apart on the x axis. The revisit pass
    sees the same per-location scene, optionally with Gaussian point noise
    and a jittered position, and optionally in reverse order (out-and-back).
    """
    scene_kwargs = scene_kwargs or {}
    scenes = [
        make_scene(np.random.default_rng(base_seed + loc), **scene_kwargs)
        for loc in range(n_locations)
    ]
    noise_rng = np.random.default_rng(base_seed + 10_000)

    order = list(range(n_locations))
    revisit = list(reversed(order)) if reverse_revisit else list(order)
    scans: list[PointCloud] = []
    poses: list[PoseRecord] = []
    for frame_id, loc in enumerate(order + revisit):
        cloud = scenes[loc].copy()
        position = np.array([spacing * loc, 0.0, 0.0])
        if frame_id >= n_locations:
            if noise_sigma > 0.0:
                cloud = cloud + noise_rng.normal(0.0, noise_sigma, cloud.shape)
            if pose_jitter > 0.0:
                position = position + np.append(
                    noise_rng.uniform(-pose_jitter, pose_jitter, 2), 0.0
                )
        scans.append(PointCloud(cloud, frame_id=frame_id))
        poses.append(PoseRecord(frame_id, np.eye(3), position))
    return scans, poses


def write_sequence(out_dir, scans: list[PointCloud], poses: list[PoseRecord]) -> Path:
    """Write scans as kitti_bin plus a kitti_12col pose file; returns the root."""
    root = Path(out_dir)
    scan_dir = root / "scans"
    scan_dir.mkdir(parents=True, exist_ok=True)
    for scan in scans:
        rec = np.zeros((len(scan), 4), dtype="<f4")
        rec[:, :3] = scan.points
        (scan_dir / f"{scan.frame_id:06d}.bin").write_bytes(rec.tobytes())
    with open(root / "poses.txt", "w") as fh:
        for pose in poses:
            mat = np.column_stack([pose.rotation, pose.translation])
            fh.write(" ".join(f"{v:.9f}" for v in mat.ravel()) + "\n")
    return root
