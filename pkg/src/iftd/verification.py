"""Loop verification: rigid-consistency scoring plus BEV image similarity.

Every matched descriptor pair proposes a planar rigid transform (SVD fit of
its three vertex correspondences). Each hypothesis is scored by how many
pairs it maps consistently within a distance threshold (Dnum) and how many
distinct query vertices those consistent pairs cover (Vnum). The best
hypothesis must clear both count gates, after which the candidate BEV image
is warped into the query frame and compared by the cosine similarity of
downsampled horizontal-difference matrices.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .bev import BevImage
from .database import CandidateVote
from .errors import ConfigError, DegenerateGeometryError

log = logging.getLogger(__name__)

_HYPOTHESIS_CHUNK = 64
_RANK_RTOL = 1e-9  # second singular value below this fraction of the first


def _wrap_angle(angle: float) -> float:
    wrapped = math.remainder(angle, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class PoseTransform:
    """Planar rotation (yaw) plus 3D translation, mapping candidate to query."""

    yaw: float
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def rotation_matrix(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s], [s, c]])

    def apply(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return xy @ self.rotation_matrix().T + np.array(self.translation[:2])

    def inverse(self) -> "PoseTransform":
        rot = self.rotation_matrix()
        tx, ty = -(rot.T @ np.array(self.translation[:2]))
        return PoseTransform(_wrap_angle(-self.yaw), (float(tx), float(ty), -self.translation[2]))


@dataclass(frozen=True)
class VerificationConfig:
    dist_threshold: float = 0.6
    min_triangle_matches: int = 5
    min_vertex_count: int = 8
    sim_threshold: float = 0.5
    hash_resolution: int = 20

    def __post_init__(self) -> None:
        if self.dist_threshold <= 0:
            raise ConfigError("dist_threshold must be positive")
        if self.min_triangle_matches <= 0 or self.min_vertex_count <= 0:
            raise ConfigError("match count thresholds must be positive")
        if not -1.0 <= self.sim_threshold <= 1.0:
            raise ConfigError("sim_threshold must lie in [-1, 1]")
        if self.hash_resolution < 2:
            raise ConfigError("hash_resolution must be at least 2")


@dataclass
class VerificationResult:
    accepted: bool
    transform: PoseTransform
    similarity: float
    dnum_max: int
    vnum_max: int


def _planar_rigid_batch(src: np.ndarray, dst: np.ndarray):
    """Least-squares rigid fits dst ~ R @ src + t for stacked point sets.

    src, dst: (H, P, 2). Returns (R (H,2,2), t (H,2), ok (H,)); ok is False
    where the cross-covariance is rank deficient (collinear or coincident
    points), in which case that slice's R/t are meaningless.
    """
    src_c = src.mean(axis=1, keepdims=True)
    dst_c = dst.mean(axis=1, keepdims=True)
    cov = (src - src_c).transpose(0, 2, 1) @ (dst - dst_c)
    u, s, vt = np.linalg.svd(cov)
    v = vt.transpose(0, 2, 1)
    ut = u.transpose(0, 2, 1)
    det = np.linalg.det(v @ ut)
    flip = np.repeat(np.eye(2)[None], len(src), axis=0)
    flip[:, 1, 1] = np.sign(det)
    rot = v @ flip @ ut
    t = dst_c[:, 0, :] - np.einsum("hab,hb->ha", rot, src_c[:, 0, :])
    ok = s[:, 1] > _RANK_RTOL * s[:, 0]
    return rot, t, ok


def svd_transform(pairs) -> PoseTransform:
    """Planar rigid transform mapping candidate vertices onto query vertices.

    ``pairs`` is a sequence of (query_xy, candidate_xy) with at least three
    entries. Raises DegenerateGeometryError when the points are collinear or
    coincident.
    """
    if len(pairs) < 3:
        raise ValueError("need at least 3 correspondences")
    query = np.array([p[0] for p in pairs], dtype=np.float64)
    cand = np.array([p[1] for p in pairs], dtype=np.float64)
    rot, t, ok = _planar_rigid_batch(cand[None], query[None])
    if not ok[0]:
        raise DegenerateGeometryError("correspondences are collinear or coincident")
    yaw = _wrap_angle(math.atan2(rot[0, 1, 0], rot[0, 0, 0]))
    return PoseTransform(yaw, (float(t[0, 0]), float(t[0, 1]), 0.0))


def estimate_z(query_ground_z: float | None, cand_ground_z: float | None):
    """Vertical offset from per-frame mean ground heights.

    Returns (tz, flagged); flagged is True when either frame lacks ground
    points, in which case tz falls back to 0.
    """
    if query_ground_z is None or cand_ground_z is None:
        return 0.0, True
    return float(query_ground_z - cand_ground_z), False


def _vertices(desc) -> list[tuple[float, float]]:
    return [desc.vertex_a[:2], desc.vertex_b[:2], desc.vertex_c[:2]]


def _block_mean(values: np.ndarray, resolution: int) -> np.ndarray:
    n = values.shape[0]
    step = n // resolution
    return (
        values.astype(np.float64)
        .reshape(resolution, step, resolution, step)
        .mean(axis=(1, 3))
    )


def _warp_to_query_frame(values: np.ndarray, transform: PoseTransform, config) -> np.ndarray:
    """Resample a candidate BEV image into the query frame (nearest bin)."""
    n = config.resolution_n
    half = config.sensing_size_k / 2.0
    bin_size = config.bin_size
    centers = -half + (np.arange(n) + 0.5) * bin_size
    gx, gy = np.meshgrid(centers, centers)  # gx varies along columns
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    src = (pts - np.array(transform.translation[:2])) @ transform.rotation_matrix()
    jj = np.floor((src[:, 0] + half) / bin_size).astype(np.int64)
    ii = np.floor((src[:, 1] + half) / bin_size).astype(np.int64)
    inside = (ii >= 0) & (ii < n) & (jj >= 0) & (jj < n)
    out = np.zeros(n * n, dtype=values.dtype)
    out[inside] = values[ii[inside], jj[inside]]
    return out.reshape(n, n)


def image_similarity(
    query_img: BevImage,
    cand_img: BevImage,
    transform: PoseTransform,
    hash_resolution: int = 20,
) -> float:
    """Cosine similarity of downsampled horizontal-difference matrices.

    The candidate image is warped by ``transform`` into the query frame,
    both images are block-averaged to hash_resolution^2, and the signed
    right-neighbor differences are compared. Zero-norm difference vectors
    yield 0.
    """
    if query_img.config != cand_img.config:
        raise ValueError("query and candidate images use different BEV configs")
    n = query_img.config.resolution_n
    if n % hash_resolution:
        raise ConfigError(
            f"resolution_n={n} is not divisible by hash_resolution={hash_resolution}"
        )
    warped = _warp_to_query_frame(cand_img.values, transform, cand_img.config)
    dq = np.diff(_block_mean(query_img.values, hash_resolution), axis=1).ravel()
    dc = np.diff(_block_mean(warped, hash_resolution), axis=1).ravel()
    nq = np.linalg.norm(dq)
    nc = np.linalg.norm(dc)
    if nq == 0.0 or nc == 0.0:
        return 0.0
    return float(dq @ dc / (nq * nc))


def _consistency_counts(rot, t, cand_pts, query_pts, th2):
    """Dnum per hypothesis: pairs whose 3 vertices all land within threshold."""
    moved = np.einsum("hab,pvb->hpva", rot, cand_pts) + t[:, None, None, :]
    d2 = ((moved - query_pts[None]) ** 2).sum(axis=-1)
    consistent = (d2 < th2).all(axis=-1)
    return consistent.sum(axis=1), consistent


def _distinct_vertex_count(query_pts: np.ndarray, consistent_row: np.ndarray) -> int:
    verts = query_pts[consistent_row].reshape(-1, 2)
    if verts.size == 0:
        return 0
    return len(np.unique(verts, axis=0))


def verify(
    query_img: BevImage,
    cand_img: BevImage,
    candidate: CandidateVote,
    config: VerificationConfig,
) -> VerificationResult:
    """Score a candidate frame against the query (full fine-matching stage).

    Every matched pair is tried as a transform hypothesis; the hypothesis
    with the most consistent pairs wins (ties: larger distinct-vertex count,
    then earlier pair). Degenerate pairs are skipped; if all are degenerate
    the result is a rejection with dnum_max = 0. Image similarity runs only
    when both count gates pass, and acceptance additionally requires the
    similarity to clear sim_threshold.
    """
    pairs = candidate.matched_pairs
    if not pairs:
        raise ValueError("candidate carries no matched pairs")
    query_pts = np.array([_vertices(q) for q, _ in pairs], dtype=np.float64)
    cand_pts = np.array([_vertices(s) for _, s in pairs], dtype=np.float64)
    n_pairs = len(pairs)
    rot, t, ok = _planar_rigid_batch(cand_pts, query_pts)
    if not ok.any():
        return VerificationResult(False, PoseTransform(0.0), 0.0, 0, 0)

    th2 = config.dist_threshold**2
    valid = np.nonzero(ok)[0]
    dnum = np.full(n_pairs, -1, dtype=np.int64)
    perfect = -1
    for start in range(0, len(valid), _HYPOTHESIS_CHUNK):
        chunk = valid[start : start + _HYPOTHESIS_CHUNK]
        counts, _ = _consistency_counts(rot[chunk], t[chunk], cand_pts, query_pts, th2)
        dnum[chunk] = counts
        if (counts == n_pairs).any():
            # nothing can beat a hypothesis consistent with every pair, and
            # equal-Dnum ties share the same consistent set, hence the same
            # Vnum, so the first such index is the final winner
            perfect = int(chunk[np.nonzero(counts == n_pairs)[0][0]])
            break

    if perfect >= 0:
        best = perfect
        dnum_max = n_pairs
    else:
        dnum_max = int(dnum.max())
        contenders = np.nonzero(dnum == dnum_max)[0]
        best = int(contenders[0])
        best_vnum = -1
        for idx in contenders:
            _, consistent = _consistency_counts(
                rot[idx : idx + 1], t[idx : idx + 1], cand_pts, query_pts, th2
            )
            vnum = _distinct_vertex_count(query_pts, consistent[0])
            if vnum > best_vnum:
                best_vnum, best = vnum, int(idx)
    _, consistent = _consistency_counts(
        rot[best : best + 1], t[best : best + 1], cand_pts, query_pts, th2
    )
    vnum_max = _distinct_vertex_count(query_pts, consistent[0])

    yaw = _wrap_angle(math.atan2(rot[best, 1, 0], rot[best, 0, 0]))
    transform = PoseTransform(yaw, (float(t[best, 0]), float(t[best, 1]), 0.0))
    if not (
        dnum_max > config.min_triangle_matches and vnum_max > config.min_vertex_count
    ):
        return VerificationResult(False, transform, 0.0, dnum_max, vnum_max)

    tz, flagged = estimate_z(query_img.ground_z, cand_img.ground_z)
    if flagged:
        log.warning(
            "frame %s vs %s: missing ground stats, tz fixed to 0",
            query_img.frame_id,
            cand_img.frame_id,
        )
    transform = replace(
        transform, translation=(transform.translation[0], transform.translation[1], tz)
    )
    similarity = image_similarity(query_img, cand_img, transform, config.hash_resolution)
    return VerificationResult(
        similarity > config.sim_threshold, transform, similarity, dnum_max, vnum_max
    )
