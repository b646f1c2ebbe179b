"""Shi-Tomasi corner extraction on BEV images.

Gradients come from 3x3 Sobel kernels, the structure tensor is summed over
a block_size window, and the corner score is the smaller eigenvalue. BEV
images are integer-valued, so every sum here is exact in float64 and the
scores are bit-stable across summation orders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bev import BevImage
from .errors import ConfigError


@dataclass(frozen=True)
class ShiTomasiConfig:
    max_corners: int = 500
    quality_level: float = 0.01
    min_distance: int = 3
    block_size: int = 3

    def __post_init__(self) -> None:
        if self.max_corners < 3:
            raise ConfigError("max_corners must be at least 3")
        if not 0.0 < self.quality_level < 1.0:
            raise ConfigError("quality_level must lie in (0, 1)")
        if self.min_distance < 1:
            raise ConfigError("min_distance must be at least 1")
        if self.block_size < 3 or self.block_size % 2 == 0:
            raise ConfigError("block_size must be odd and at least 3")


@dataclass(frozen=True)
class Keypoint:
    i: int
    j: int
    value: int
    score: float


def _valid_box_sum(img: np.ndarray, size: int) -> np.ndarray:
    """Sliding size x size window sum, valid region only."""
    h = img.shape[0] - size + 1
    rows = img[0:h]
    for d in range(1, size):
        rows = rows + img[d : h + d]
    w = img.shape[1] - size + 1
    out = rows[:, 0:w]
    for d in range(1, size):
        out = out + rows[:, d : w + d]
    return out


def corner_response(values: np.ndarray, block_size: int = 3) -> np.ndarray:
    """Min-eigenvalue corner score per pixel.

    Pixels whose gradient or summation window leaves the image score 0, so
    the sensing boundary never produces phantom corners.
    """
    img = np.asarray(values, dtype=np.float64)
    # 3x3 Sobel on the valid interior, separable: smooth across, difference along
    row_smooth = img[:-2] + 2.0 * img[1:-1] + img[2:]
    gx = row_smooth[:, 2:] - row_smooth[:, :-2]
    col_smooth = img[:, :-2] + 2.0 * img[:, 1:-1] + img[:, 2:]
    gy = col_smooth[2:, :] - col_smooth[:-2, :]
    sxx = _valid_box_sum(gx * gx, block_size)
    syy = _valid_box_sum(gy * gy, block_size)
    sxy = _valid_box_sum(gx * gy, block_size)
    trace_half = (sxx + syy) * 0.5
    interior = trace_half - np.sqrt(((sxx - syy) * 0.5) ** 2 + sxy * sxy)
    score = np.zeros(img.shape)
    border = block_size // 2 + 1
    score[border:-border, border:-border] = interior
    return score


def detect_keypoints(image: BevImage, config: ShiTomasiConfig) -> list[Keypoint]:
    """Corner keypoints, strongest first.

    Pixels scoring at least quality_level times the global maximum enter a
    greedy non-max suppression in (-score, row, col) order; survivors keep a
    Chebyshev clearance of min_distance from each other.
    """
    score = corner_response(image.values, config.block_size)
    smax = float(score.max())
    if smax <= 0.0:
        return []
    thresh = config.quality_level * smax
    ii, jj = np.nonzero(score >= thresh)
    strengths = score[ii, jj]
    order = np.lexsort((jj, ii, -strengths))
    n = score.shape[0]
    d = config.min_distance
    blocked = np.zeros(score.shape, dtype=bool)
    out: list[Keypoint] = []
    for idx in order:
        i, j = int(ii[idx]), int(jj[idx])
        if blocked[i, j]:
            continue
        out.append(Keypoint(i, j, int(image.values[i, j]), float(strengths[idx])))
        if len(out) == config.max_corners:
            break
        blocked[
            max(0, i - d + 1) : min(n, i + d), max(0, j - d + 1) : min(n, j + d)
        ] = True
    return out
