"""Hash-bucketed descriptor storage with per-frame voting.

Descriptors are bucketed by their quantized side-length triple. A query
walks its own keys (optionally probing the 26 adjacent keys to absorb
quantization at bucket boundaries) and every stored descriptor found in an
eligible frame casts one vote for that frame.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from itertools import product

from .triangles import TriangleDescriptor

DEFAULT_SIDE_RESOLUTION = 0.2  # meters, one BEV bin at the default grid
DEFAULT_TOP_K = 50
DEFAULT_EXCLUSION_WINDOW = 30  # keyframes

_PROBE_OFFSETS = tuple(product((-1, 0, 1), repeat=3))

_SNAPSHOT_MAGIC = b"IFTDDB\x00"
_SNAPSHOT_VERSION = 1


def hash_key(side_lengths, side_resolution: float) -> tuple[int, int, int]:
    """Quantized side-length triple; components inherit the ascending order."""
    s0, s1, s2 = side_lengths
    return (
        int(math.floor(s0 / side_resolution)),
        int(math.floor(s1 / side_resolution)),
        int(math.floor(s2 / side_resolution)),
    )


@dataclass
class CandidateVote:
    """One historical frame with its vote count and the matching pairs."""

    frame_id: int
    votes: int
    matched_pairs: list[tuple[TriangleDescriptor, TriangleDescriptor]] = field(
        default_factory=list
    )


class DescriptorDatabase:
    """Single-writer store of descriptors across keyframes.

    Queries are read-only and may run concurrently with each other, but not
    with ``insert_frame``.
    """

    def __init__(
        self,
        side_resolution: float = DEFAULT_SIDE_RESOLUTION,
        probe_neighbors: bool = True,
    ) -> None:
        if side_resolution <= 0:
            raise ValueError("side_resolution must be positive")
        self.side_resolution = float(side_resolution)
        self.probe_neighbors = bool(probe_neighbors)
        self.buckets: dict[tuple[int, int, int], list[TriangleDescriptor]] = {}
        self.frame_ids: set[int] = set()

    @property
    def frames_indexed(self) -> int:
        return len(self.frame_ids)

    def insert_frame(
        self, descriptors: list[TriangleDescriptor], frame_id: int | None = None
    ) -> None:
        """Index one frame's descriptors; the frame id must be new."""
        if frame_id is None:
            if not descriptors:
                raise ValueError("an empty batch needs an explicit frame_id")
            frame_id = descriptors[0].frame_id
        if any(d.frame_id != frame_id for d in descriptors):
            raise ValueError("descriptors span more than one frame_id")
        if frame_id in self.frame_ids:
            raise ValueError(f"frame {frame_id} already indexed")
        for d in descriptors:
            key = hash_key(d.side_lengths, self.side_resolution)
            self.buckets.setdefault(key, []).append(d)
        self.frame_ids.add(frame_id)

    def query_candidates(
        self,
        descriptors: list[TriangleDescriptor],
        exclusion_window: int = DEFAULT_EXCLUSION_WINDOW,
        top_k: int = DEFAULT_TOP_K,
    ) -> list[CandidateVote]:
        """Top voted historical frames for a query frame's descriptors.

        Only frames with id <= query id - exclusion_window vote. Ties in the
        vote count rank the more recent frame first.
        """
        if top_k < 1:
            raise ValueError("top_k must be at least 1")
        if not descriptors:
            return []
        latest_eligible = descriptors[0].frame_id - exclusion_window
        pairs: dict[int, list[tuple[TriangleDescriptor, TriangleDescriptor]]] = {}
        for query in descriptors:
            key = hash_key(query.side_lengths, self.side_resolution)
            if self.probe_neighbors:
                probes = [
                    (key[0] + a, key[1] + b, key[2] + c) for a, b, c in _PROBE_OFFSETS
                ]
            else:
                probes = [key]
            for probe in probes:
                bucket = self.buckets.get(probe)
                if not bucket:
                    continue
                for stored in bucket:
                    if stored.frame_id <= latest_eligible:
                        pairs.setdefault(stored.frame_id, []).append((query, stored))
        ranked = sorted(pairs.items(), key=lambda kv: (-len(kv[1]), -kv[0]))
        return [
            CandidateVote(frame_id, len(matched), matched)
            for frame_id, matched in ranked[:top_k]
        ]

    def save(self, path) -> None:
        """Snapshot to a versioned binary file for warm restarts."""
        frames = sorted(self.frame_ids)
        keys = sorted(self.buckets)
        with open(path, "wb") as fh:
            fh.write(_SNAPSHOT_MAGIC)
            fh.write(
                struct.pack(
                    "<HBxdII",
                    _SNAPSHOT_VERSION,
                    int(self.probe_neighbors),
                    self.side_resolution,
                    len(frames),
                    len(keys),
                )
            )
            fh.write(struct.pack(f"<{len(frames)}q", *frames))
            for key in keys:
                bucket = self.buckets[key]
                fh.write(struct.pack("<3qI", *key, len(bucket)))
                for d in bucket:
                    fh.write(
                        struct.pack(
                            "<q12d",
                            d.frame_id,
                            *d.vertex_a,
                            *d.vertex_b,
                            *d.vertex_c,
                            *d.side_lengths,
                        )
                    )

    @classmethod
    def load(cls, path) -> "DescriptorDatabase":
        with open(path, "rb") as fh:
            magic = fh.read(len(_SNAPSHOT_MAGIC))
            if magic != _SNAPSHOT_MAGIC:
                raise ValueError(f"{path}: not a descriptor database snapshot")
            version, probe, side_resolution, n_frames, n_keys = struct.unpack(
                "<HBxdII", fh.read(struct.calcsize("<HBxdII"))
            )
            if version != _SNAPSHOT_VERSION:
                raise ValueError(f"{path}: unsupported snapshot version {version}")
            db = cls(side_resolution=side_resolution, probe_neighbors=bool(probe))
            frames = struct.unpack(f"<{n_frames}q", fh.read(8 * n_frames))
            db.frame_ids = set(frames)
            rec = struct.Struct("<q12d")
            head = struct.Struct("<3qI")
            for _ in range(n_keys):
                k0, k1, k2, count = head.unpack(fh.read(head.size))
                bucket = []
                for _ in range(count):
                    vals = rec.unpack(fh.read(rec.size))
                    bucket.append(
                        TriangleDescriptor(
                            tuple(vals[1:4]),
                            tuple(vals[4:7]),
                            tuple(vals[7:10]),
                            tuple(vals[10:13]),
                            vals[0],
                        )
                    )
                db.buckets[(k0, k1, k2)] = bucket
        return db
