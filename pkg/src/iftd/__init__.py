"""LiDAR loop-closure detection from height-encoded BEV triangle descriptors."""

from .bev import BevConfig, BevImage, bin_to_metric, project, write_pgm
from .config import DatabaseConfig, EvalConfig, format_config, load_config
from .database import CandidateVote, DescriptorDatabase, hash_key
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    FormatError,
    IftdError,
    ValidationError,
)
from .evaluation import (
    LoopResult,
    PrPoint,
    RunResult,
    TimingSummary,
    compute_pr,
    count_opportunities,
    emit_reports,
    recompute_pr,
    run_sequence,
)
from .keypoints import Keypoint, ShiTomasiConfig, corner_response, detect_keypoints
from .pointcloud_io import (
    PointCloud,
    PoseRecord,
    accumulate_keyframe,
    load_poses,
    load_scan,
    save_scan,
)
from .triangles import (
    TriangleDescriptor,
    build_descriptors,
    build_descriptors_from_points,
    knn_query,
    write_descriptor_csv,
)
from .verification import (
    PoseTransform,
    VerificationConfig,
    VerificationResult,
    estimate_z,
    image_similarity,
    svd_transform,
    verify,
)

__version__ = "0.1.0"
