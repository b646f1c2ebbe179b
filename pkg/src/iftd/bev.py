"""Height-encoded bird's-eye-view projection.

A keyframe cloud is rasterized onto an N x N grid covering a k x k meter
square centered on the sensor. Each bin keeps a bitset of occupied height
layers; the bin value is the popcount of that bitset, so a single tall
outlier can shift a bin by at most one count (unlike max-height encoding).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .pointcloud_io import PointCloud

MAX_LAYERS = 64  # layer bitset must fit one machine word


@dataclass(frozen=True)
class BevConfig:
    sensing_size_k: float = 80.0
    resolution_n: int = 400
    layer_height: float = 0.5
    z_min: float = -2.0
    z_max: float = 14.0

    def __post_init__(self) -> None:
        if self.sensing_size_k <= 0:
            raise ConfigError("sensing_size_k must be positive")
        if self.resolution_n < 32:
            raise ConfigError("resolution_n must be at least 32")
        if self.z_min >= self.z_max:
            raise ConfigError("z_min must be below z_max")
        if self.layer_height <= 0:
            raise ConfigError("layer_height must be positive")
        if self.layer_count > MAX_LAYERS:
            raise ConfigError(
                f"{self.layer_count} height layers exceed the {MAX_LAYERS}-bit encoding"
            )

    @property
    def bin_size(self) -> float:
        return self.sensing_size_k / self.resolution_n

    @property
    def layer_count(self) -> int:
        return math.ceil((self.z_max - self.z_min) / self.layer_height)


@dataclass
class BevImage:
    """N x N grid of occupied-layer counts, row 0 at minimum y.

    ``ground_z`` is the mean z of the points in the lowest occupied height
    layer (None when the projection saw no points); it feeds the vertical
    offset estimate during loop verification.
    """

    values: np.ndarray
    frame_id: int
    config: BevConfig
    ground_z: float | None = None


def project(cloud: PointCloud, config: BevConfig) -> BevImage:
    """Rasterize a cloud into a height-encoded BEV image.

    Points outside the sensing square or the [z_min, z_max) range are
    ignored; spatial intervals are half-open so the far edges are excluded.
    """
    n = config.resolution_n
    half = config.sensing_size_k / 2.0
    pts = cloud.points
    if len(pts) == 0:
        return BevImage(np.zeros((n, n), dtype=np.uint8), cloud.frame_id, config)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    keep = (
        (x >= -half)
        & (x < half)
        & (y >= -half)
        & (y < half)
        & (z >= config.z_min)
        & (z < config.z_max)
    )
    x, y, z = x[keep], y[keep], z[keep]
    if x.size == 0:
        return BevImage(np.zeros((n, n), dtype=np.uint8), cloud.frame_id, config)
    inv_bin = n / config.sensing_size_k
    # clip guards the 1-ulp case where a point just inside the half-open
    # edge still rounds up to index n
    jj = np.clip(np.floor((x + half) * inv_bin).astype(np.int64), 0, n - 1)
    ii = np.clip(np.floor((y + half) * inv_bin).astype(np.int64), 0, n - 1)
    layers = np.clip(
        np.floor((z - config.z_min) / config.layer_height).astype(np.int64),
        0,
        config.layer_count - 1,
    )
    bits = np.zeros((n, n), dtype=np.uint64)
    np.bitwise_or.at(bits, (ii, jj), np.uint64(1) << layers.astype(np.uint64))
    values = np.bitwise_count(bits).astype(np.uint8)
    lowest = layers.min()
    ground_z = float(z[layers == lowest].mean())
    return BevImage(values, cloud.frame_id, config, ground_z=ground_z)


def bin_to_metric(i: int, j: int, config: BevConfig) -> tuple[float, float]:
    """Metric (x, y) of the center of bin (i, j); i indexes y, j indexes x."""
    n = config.resolution_n
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"bin index ({i}, {j}) outside [0, {n})")
    half = config.sensing_size_k / 2.0
    return (-half + (j + 0.5) * config.bin_size, -half + (i + 0.5) * config.bin_size)


def write_pgm(image: BevImage, path) -> None:
    """Dump as binary PGM (P5), one byte per bin, for visual inspection."""
    clamped = np.minimum(image.values, 255).astype(np.uint8)
    n = image.config.resolution_n
    with open(path, "wb") as fh:
        fh.write(f"P5\n{n} {n}\n255\n".encode("ascii"))
        fh.write(clamped.tobytes())
