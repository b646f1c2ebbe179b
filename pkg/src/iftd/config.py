"""Run configuration: dataclass bundle plus a flat key=value file parser.

The on-disk format is one ``key = value`` per line, ``#`` comments, no
sections. Nested options use dotted keys (``bev.resolution_n = 400``).
Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .bev import BevConfig
from .database import DEFAULT_EXCLUSION_WINDOW, DEFAULT_SIDE_RESOLUTION, DEFAULT_TOP_K
from .errors import ConfigError
from .keypoints import ShiTomasiConfig
from .pointcloud_io import POSE_FORMATS, SCAN_FORMATS
from .triangles import DEFAULT_KNN
from .verification import VerificationConfig

DEFAULT_SWEEP = tuple(round(0.05 * i, 2) for i in range(20))  # 0.00 .. 0.95


@dataclass(frozen=True)
class DatabaseConfig:
    side_resolution: float = DEFAULT_SIDE_RESOLUTION
    probe_neighbors: bool = True
    exclusion_window: int = DEFAULT_EXCLUSION_WINDOW
    top_k: int = DEFAULT_TOP_K

    def __post_init__(self) -> None:
        if self.side_resolution <= 0:
            raise ConfigError("side_resolution must be positive")
        if self.exclusion_window < 0:
            raise ConfigError("exclusion_window must be non-negative")
        if self.top_k < 1:
            raise ConfigError("top_k must be at least 1")


@dataclass(frozen=True)
class EvalConfig:
    dataset_root: Path
    pose_file: Path
    scan_format: str = "kitti_bin"
    pose_format: str = "kitti_12col"
    keyframe_stride: int = 5
    gt_distance_threshold: float = 15.0
    sweep: tuple[float, ...] = DEFAULT_SWEEP
    knn: int = DEFAULT_KNN
    bev: BevConfig = field(default_factory=BevConfig)
    keypoints: ShiTomasiConfig = field(default_factory=ShiTomasiConfig)
    database: DatabaseConfig = field(default_factory=DatabaseConfig)
    verification: VerificationConfig = field(default_factory=VerificationConfig)

    def __post_init__(self) -> None:
        if self.scan_format not in SCAN_FORMATS:
            raise ConfigError(f"scan_format must be one of {SCAN_FORMATS}")
        if self.pose_format not in POSE_FORMATS:
            raise ConfigError(f"pose_format must be one of {POSE_FORMATS}")
        if self.keyframe_stride < 1:
            raise ConfigError("keyframe_stride must be at least 1")
        if self.gt_distance_threshold <= 0:
            raise ConfigError("gt_distance_threshold must be positive")
        if not self.sweep:
            raise ConfigError("sweep must not be empty")
        if list(self.sweep) != sorted(self.sweep):
            raise ConfigError("sweep thresholds must be sorted ascending")
        if self.knn < 2:
            raise ConfigError("knn must be at least 2")
        if self.bev.resolution_n % self.verification.hash_resolution:
            raise ConfigError(
                "bev.resolution_n must be divisible by verify.hash_resolution"
            )


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_sweep(raw: str) -> tuple[float, ...]:
    return tuple(float(part) for part in raw.replace(",", " ").split())


_KEY_PARSERS = {
    "dataset_root": str,
    "pose_file": str,
    "scan_format": str,
    "pose_format": str,
    "keyframe_stride": int,
    "gt_distance_threshold": float,
    "sweep": _parse_sweep,
    "knn": int,
    "bev.sensing_size_k": float,
    "bev.resolution_n": int,
    "bev.layer_height": float,
    "bev.z_min": float,
    "bev.z_max": float,
    "keypoints.max_corners": int,
    "keypoints.quality_level": float,
    "keypoints.min_distance": int,
    "keypoints.block_size": int,
    "database.side_resolution": float,
    "database.probe_neighbors": _parse_bool,
    "database.exclusion_window": int,
    "database.top_k": int,
    "verify.dist_threshold": float,
    "verify.min_triangle_matches": int,
    "verify.min_vertex_count": int,
    "verify.sim_threshold": float,
    "verify.hash_resolution": int,
}

_SECTION_FIELDS = {"bev": "bev", "keypoints": "keypoints", "database": "database", "verify": "verification"}
_SECTION_TYPES = {"bev": BevConfig, "keypoints": ShiTomasiConfig, "database": DatabaseConfig, "verify": VerificationConfig}


def load_config(path) -> EvalConfig:
    """Parse a flat key=value config file into an EvalConfig."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    top: dict[str, object] = {}
    sections: dict[str, dict[str, object]] = {name: {} for name in _SECTION_TYPES}
    for ln, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{ln}: expected 'key = value'")
        key, raw = (part.strip() for part in body.split("=", 1))
        parser = _KEY_PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
        try:
            value = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{ln}: bad value for {key!r}: {exc}") from None
        if "." in key:
            section, name = key.split(".", 1)
            sections[section][name] = value
        else:
            top[key] = value
    for required in ("dataset_root", "pose_file"):
        if required not in top:
            raise ConfigError(f"{path}: missing required key {required!r}")
    base = path.parent
    top["dataset_root"] = (base / str(top["dataset_root"])).resolve()
    top["pose_file"] = (base / str(top["pose_file"])).resolve()
    for section, cfg_type in _SECTION_TYPES.items():
        top[_SECTION_FIELDS[section]] = cfg_type(**sections[section])
    return EvalConfig(**top)


def format_config(config: EvalConfig) -> str:
    """Render an EvalConfig back to the flat key=value format."""
    lines = [
        f"dataset_root = {config.dataset_root}",
        f"pose_file = {config.pose_file}",
        f"scan_format = {config.scan_format}",
        f"pose_format = {config.pose_format}",
        f"keyframe_stride = {config.keyframe_stride}",
        f"gt_distance_threshold = {config.gt_distance_threshold}",
        "sweep = " + ",".join(repr(t) for t in config.sweep),
        f"knn = {config.knn}",
    ]
    for prefix, sub in (
        ("bev", config.bev),
        ("keypoints", config.keypoints),
        ("database", config.database),
        ("verify", config.verification),
    ):
        for name in sub.__dataclass_fields__:
            lines.append(f"{prefix}.{name} = {getattr(sub, name)}")
    return "\n".join(lines) + "\n"
