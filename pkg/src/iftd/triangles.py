"""Triangle descriptors over BEV keypoints.

Each keypoint is joined with every pair among its k nearest neighbors to
form candidate triangles; duplicates (same vertex triple reached from a
different center) are removed, thin triangles are rejected by an angle
window, and vertices are put in a canonical order keyed by the side they
oppose. Side lengths are stored ascending and double as the retrieval key.
"""

from __future__ import annotations

import csv
import math
from itertools import combinations
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .bev import BevConfig, bin_to_metric
from .keypoints import Keypoint

DEFAULT_KNN = 15
ANGLE_MIN_DEG = 5.0
ANGLE_MAX_DEG = 175.0
# bounds as cosines: angle >= 5 deg iff cos(angle) <= cos(5 deg), and the
# inclusive window keeps exact 5/175 degree triangles
_COS_ANGLE_MIN = math.cos(math.radians(ANGLE_MIN_DEG))
_COS_ANGLE_MAX = math.cos(math.radians(ANGLE_MAX_DEG))


class TriangleDescriptor(NamedTuple):
    """One triangle: vertices as (x, y, bin value), ascending side lengths.

    vertex_a opposes the shortest side and vertex_c the longest; equal-side
    ties fall back to ascending (x, y) vertex order.
    """

    vertex_a: tuple[float, float, float]
    vertex_b: tuple[float, float, float]
    vertex_c: tuple[float, float, float]
    side_lengths: tuple[float, float, float]
    frame_id: int

    @classmethod
    def from_vertices(cls, positions, values, frame_id: int) -> "TriangleDescriptor | None":
        """Build a canonical descriptor, or None if the angle filter rejects.

        ``positions`` is 3 x (x, y) in meters, ``values`` the three bin
        counts. Coincident vertices and angles outside the [5, 175] degree
        window return None.
        """
        (x0, y0), (x1, y1), (x2, y2) = ((float(p[0]), float(p[1])) for p in positions)
        # squared terms spelled as products to stay bit-identical with the
        # vectorized batch path
        d01 = math.sqrt((x0 - x1) * (x0 - x1) + (y0 - y1) * (y0 - y1))
        d02 = math.sqrt((x0 - x2) * (x0 - x2) + (y0 - y2) * (y0 - y2))
        d12 = math.sqrt((x1 - x2) * (x1 - x2) + (y1 - y2) * (y1 - y2))
        a, b, c = sorted((d01, d02, d12))
        if a <= 0.0:
            return None
        cos_smallest = (b * b + c * c - a * a) / (2.0 * b * c)
        cos_largest = (a * a + b * b - c * c) / (2.0 * a * b)
        if not (cos_smallest <= _COS_ANGLE_MIN and cos_largest >= _COS_ANGLE_MAX):
            return None
        verts = [(x0, y0, float(values[0])), (x1, y1, float(values[1])), (x2, y2, float(values[2]))]
        opposing = (d12, d02, d01)  # side opposite each vertex index
        order = sorted(range(3), key=lambda k: (opposing[k], verts[k][0], verts[k][1]))
        return cls(verts[order[0]], verts[order[1]], verts[order[2]], (a, b, c), frame_id)


def _knn_indices(tree: cKDTree, positions: np.ndarray, qi: int, knn: int) -> list[int]:
    """Indices of the knn nearest points to positions[qi], excluding qi.

    Ties are resolved by (squared distance, index); the tree query is
    re-expanded until the boundary distance is strictly passed so that every
    tied point is considered.
    """
    n = len(positions)
    if n < 2 or knn < 1:
        return []
    want = min(knn + 1, n)  # the query point itself comes back too
    k = want
    while True:
        dist, idx = tree.query(positions[qi], k=k)
        dist, idx = np.atleast_1d(dist), np.atleast_1d(idx)
        if k >= n or dist[-1] > dist[want - 1]:
            break
        k = min(n, 2 * k)
    cand = idx[idx != qi]
    d2 = ((positions[cand] - positions[qi]) ** 2).sum(axis=1)
    order = np.lexsort((cand, d2))
    return [int(c) for c in cand[order][:knn]]


def knn_query(
    keypoints: list[Keypoint], query_index: int, knn: int, config: BevConfig
) -> list[int]:
    """k nearest keypoints by metric distance, ties by ascending index."""
    if not keypoints:
        raise ValueError("empty keypoint list")
    if not 0 <= query_index < len(keypoints):
        raise ValueError(f"query_index {query_index} out of range")
    positions = np.array([bin_to_metric(kp.i, kp.j, config) for kp in keypoints])
    return _knn_indices(cKDTree(positions), positions, query_index, knn)


def _lex_rank(keys: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Per-row rank of 3 vertices under (key, x, y) lexicographic order."""
    rank = np.zeros(keys.shape, dtype=np.int8)
    for k in range(3):
        for m in range(3):
            if m == k:
                continue
            less = (keys[:, m] < keys[:, k]) | (
                (keys[:, m] == keys[:, k])
                & (
                    (xs[:, m] < xs[:, k])
                    | ((xs[:, m] == xs[:, k]) & (ys[:, m] < ys[:, k]))
                )
            )
            rank[:, k] += less
    return rank


def build_descriptors_from_points(
    positions: np.ndarray, values: np.ndarray, frame_id: int, knn: int = DEFAULT_KNN
) -> list[TriangleDescriptor]:
    """Descriptor construction from raw metric (x, y) positions."""
    if knn < 2:
        raise ValueError("knn must be at least 2")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    # coincident keypoints would produce zero-length sides; keep the first
    _, first = np.unique(positions, axis=0, return_index=True)
    keep = np.sort(first)
    positions, values = positions[keep], values[keep]
    n = len(positions)
    if n < 3:
        return []
    tree = cKDTree(positions)
    k = min(knn, n - 1)
    pair_idx = np.array(list(combinations(range(k), 2)), dtype=np.int64)
    blocks = []
    for qi in range(n):
        neighbors = np.array(_knn_indices(tree, positions, qi, k), dtype=np.int64)
        if len(neighbors) < 2:
            continue
        pairs = pair_idx if len(neighbors) == k else np.array(
            list(combinations(range(len(neighbors)), 2)), dtype=np.int64
        )
        block = np.empty((len(pairs), 3), dtype=np.int64)
        block[:, 0] = qi
        block[:, 1:] = neighbors[pairs]
        blocks.append(block)
    if not blocks:
        return []
    triples = np.unique(np.sort(np.concatenate(blocks), axis=1), axis=0)

    p = positions[triples]  # (U, 3, 2)
    dx, dy = p[:, 0, 0] - p[:, 1, 0], p[:, 0, 1] - p[:, 1, 1]
    d01 = np.sqrt(dx * dx + dy * dy)
    dx, dy = p[:, 0, 0] - p[:, 2, 0], p[:, 0, 1] - p[:, 2, 1]
    d02 = np.sqrt(dx * dx + dy * dy)
    dx, dy = p[:, 1, 0] - p[:, 2, 0], p[:, 1, 1] - p[:, 2, 1]
    d12 = np.sqrt(dx * dx + dy * dy)
    opposing = np.stack([d12, d02, d01], axis=1)  # side opposite each vertex
    sides = np.sort(opposing, axis=1)
    a, b, c = sides[:, 0], sides[:, 1], sides[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        cos_smallest = (b * b + c * c - a * a) / (2.0 * b * c)
        cos_largest = (a * a + b * b - c * c) / (2.0 * a * b)
    keep = (a > 0.0) & (cos_smallest <= _COS_ANGLE_MIN) & (cos_largest >= _COS_ANGLE_MAX)
    if not keep.any():
        return []
    p, sides, opposing = p[keep], sides[keep], opposing[keep]
    vals = values[triples[keep]]

    rank = _lex_rank(opposing, p[:, :, 0], p[:, :, 1])
    perm = np.argsort(rank, axis=1)
    rows = np.arange(len(p))[:, None]
    verts = np.concatenate([p[rows, perm], vals[rows, perm][:, :, None]], axis=2)

    order = np.lexsort((sides[:, 2], sides[:, 1], sides[:, 0]))
    verts_list = verts[order].tolist()
    sides_list = sides[order].tolist()
    return [
        TriangleDescriptor(tuple(v[0]), tuple(v[1]), tuple(v[2]), tuple(s), frame_id)
        for v, s in zip(verts_list, sides_list)
    ]


def build_descriptors(
    keypoints: list[Keypoint], config: BevConfig, frame_id: int, knn: int = DEFAULT_KNN
) -> list[TriangleDescriptor]:
    """Descriptors for a frame's keypoints, sorted by side lengths."""
    if len(keypoints) < 3:
        return []
    positions = np.array([bin_to_metric(kp.i, kp.j, config) for kp in keypoints])
    values = np.array([kp.value for kp in keypoints], dtype=np.float64)
    return build_descriptors_from_points(positions, values, frame_id, knn)


def write_descriptor_csv(descriptors: list[TriangleDescriptor], path) -> None:
    """Dump descriptors as CSV for cross-run diffing."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["frame_id", "ax", "ay", "av", "bx", "by", "bv", "cx", "cy", "cv", "s0", "s1", "s2"]
        )
        for d in descriptors:
            writer.writerow(
                [d.frame_id]
                + [repr(v) for v in (*d.vertex_a, *d.vertex_b, *d.vertex_c, *d.side_lengths)]
            )
