"""Cloud file I/O, synthetic labeled scenes, and room block splitting.

The on-disk cloud format (PVCN) is a minimal little-endian binary layout:
magic, version, point/feature counts, presence flags, then positions,
features, and optional labels and mask. CSV (x, y, z, features..., label)
covers hand-authored fixtures. Synthetic scenes place simple surfaces
(plane, sphere, box) on a non-overlapping cell grid; per-point features are
the generating surface normal plus clipped Gaussian noise.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, FormatError
from .geometry import PointCloud

_CLOUD_MAGIC = b"PVCN"
_CLOUD_VERSION = 1
_FLAG_LABELS = 1
_FLAG_MASK = 2


class ByteCursor:
    """Sequential reader that reports the exact offset of a short read."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated: needed {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def expect_end(self, what: str) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes after {what}")


# ---------------------------------------------------------------------------
# PVCN binary format
# ---------------------------------------------------------------------------


def cloud_bytes(cloud: PointCloud) -> bytes:
    n, c = cloud.n_points, cloud.n_features
    flags = 0
    if cloud.labels is not None:
        flags |= _FLAG_LABELS
        if cloud.labels.min() < 0 or cloud.labels.max() >= 2 ** 32:
            raise DomainError("labels must fit an unsigned 32-bit integer")
    if cloud.mask is not None:
        flags |= _FLAG_MASK
    parts = [
        _CLOUD_MAGIC,
        struct.pack("<IIII", _CLOUD_VERSION, n, c, flags),
        np.ascontiguousarray(cloud.positions, dtype="<f4").tobytes(),
        np.ascontiguousarray(cloud.features, dtype="<f4").tobytes(),
    ]
    if cloud.labels is not None:
        parts.append(np.ascontiguousarray(cloud.labels, dtype="<u4").tobytes())
    if cloud.mask is not None:
        parts.append(np.ascontiguousarray(cloud.mask, dtype=np.uint8).tobytes())
    return b"".join(parts)


def write_cloud(cloud: PointCloud, path) -> None:
    with open(path, "wb") as fh:
        fh.write(cloud_bytes(cloud))


def cloud_from_bytes(data: bytes) -> PointCloud:
    cur = ByteCursor(data)
    if cur.take(4) != _CLOUD_MAGIC:
        raise FormatError("bad magic, expected PVCN")
    version = cur.u32()
    if version != _CLOUD_VERSION:
        raise FormatError(f"unsupported cloud format version {version}")
    n, c, flags = cur.u32(), cur.u32(), cur.u32()
    if flags & ~(_FLAG_LABELS | _FLAG_MASK):
        raise FormatError(f"unknown flag bits 0x{flags:x}")
    positions = np.frombuffer(cur.take(12 * n), dtype="<f4").reshape(n, 3).copy()
    features = np.frombuffer(cur.take(4 * n * c), dtype="<f4").reshape(n, c).copy()
    labels = mask = None
    if flags & _FLAG_LABELS:
        labels = np.frombuffer(cur.take(4 * n), dtype="<u4").astype(np.int64)
    if flags & _FLAG_MASK:
        mask = np.frombuffer(cur.take(n), dtype=np.uint8).astype(bool)
    cur.expect_end("cloud")
    return PointCloud(positions=positions, features=features, labels=labels, mask=mask)


def read_cloud(path) -> PointCloud:
    with open(path, "rb") as fh:
        return cloud_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# CSV interchange: x, y, z, feature..., label
# ---------------------------------------------------------------------------


def read_cloud_csv(path) -> PointCloud:
    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"malformed CSV: {exc}") from exc
    if table.shape[1] < 5:
        raise FormatError(
            f"CSV needs x,y,z, at least one feature, and a label column; "
            f"got {table.shape[1]} columns"
        )
    return PointCloud(
        positions=table[:, :3].copy(),
        features=table[:, 3:-1].copy(),
        labels=table[:, -1].astype(np.int64),
    )


def write_cloud_csv(cloud: PointCloud, path) -> None:
    if cloud.labels is None:
        raise DomainError("CSV layout requires labels")
    table = np.concatenate(
        [cloud.positions, cloud.features, cloud.labels[:, None].astype(np.float64)],
        axis=1,
    )
    np.savetxt(path, table, delimiter=",", fmt="%.17g")


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

SHAPE_KINDS = ("plane", "sphere", "box")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Recipe for one deterministic labeled scene.

    ``shapes`` lists the surface instances to place; each kind is labeled by
    its index in SHAPE_KINDS. Points are split evenly across instances with
    the remainder going to the earliest ones. Noise displacement vectors are
    norm-clipped at 3 sigma so every point stays within 3 sigma of its
    generating surface.
    """

    n_points: int = 2048
    shapes: tuple = SHAPE_KINDS
    noise_sigma: float = 0.02
    seed: object = 0
    extent: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple(self.shapes))
        unknown = [s for s in self.shapes if s not in SHAPE_KINDS]
        if unknown:
            raise ConfigError(f"unknown shape kinds {unknown}, valid: {SHAPE_KINDS}")
        if not self.shapes:
            raise ConfigError("scene needs at least one shape")
        if self.n_points < len(self.shapes):
            raise ConfigError(
                f"{self.n_points} points cannot cover {len(self.shapes)} shapes"
            )
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not self.extent > 0:
            raise ConfigError("extent must be positive")

    def shape_counts(self) -> list:
        base, rem = divmod(self.n_points, len(self.shapes))
        return [base + (i < rem) for i in range(len(self.shapes))]


@dataclass(frozen=True)
class ShapeInfo:
    kind: str
    label: int
    center: tuple
    size: float


def _sample_plane(rng, n, center, size):
    pts = np.tile(center, (n, 1))
    pts[:, :2] += rng.uniform(-size, size, size=(n, 2))
    normals = np.tile(np.array([0.0, 0.0, 1.0]), (n, 1))
    return pts, normals


def _sample_sphere(rng, n, center, size):
    dirs = rng.normal(size=(n, 3))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    return center + size * dirs, dirs


def _sample_box(rng, n, center, size):
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-size, size, size=(n, 2))
    pts = np.tile(center, (n, 1))
    normals = np.zeros((n, 3))
    for f in range(6):
        rows = face == f
        axis, sign = divmod(f, 2)
        sign = 1.0 if sign == 0 else -1.0
        others = [a for a in range(3) if a != axis]
        pts[rows, axis] += sign * size
        pts[rows, others[0]] += uv[rows, 0]
        pts[rows, others[1]] += uv[rows, 1]
        normals[rows, axis] = sign
    return pts, normals


_SAMPLERS = {"plane": _sample_plane, "sphere": _sample_sphere, "box": _sample_box}


def _clip_norm(vectors: np.ndarray, limit: float) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return vectors * np.minimum(1.0, limit / np.maximum(norms, 1e-300))


def generate_scene_with_info(spec: SyntheticSceneSpec):
    """Deterministic labeled cloud plus the placement of every shape."""
    rng = np.random.default_rng(spec.seed)
    n_shapes = len(spec.shapes)
    side = math.ceil(math.sqrt(n_shapes))
    cell = spec.extent / side
    cells = rng.permutation(side * side)[:n_shapes]

    positions, normals, labels, infos = [], [], [], []
    for i, (kind, count) in enumerate(zip(spec.shapes, spec.shape_counts())):
        cx = (cells[i] % side + 0.5) * cell
        cy = (cells[i] // side + 0.5) * cell
        size = rng.uniform(0.3, 0.7) * cell / 2
        cz = rng.uniform(size, spec.extent - size) if spec.extent > 2 * size else size
        center = np.array([cx, cy, cz])
        pts, nrm = _SAMPLERS[kind](rng, count, center, size)
        label = SHAPE_KINDS.index(kind)
        positions.append(pts)
        normals.append(nrm)
        labels.append(np.full(count, label, dtype=np.int64))
        infos.append(ShapeInfo(kind=kind, label=label, center=tuple(center), size=size))

    positions = np.concatenate(positions)
    normals = np.concatenate(normals)
    labels = np.concatenate(labels)
    if spec.noise_sigma > 0:
        limit = 3.0 * spec.noise_sigma
        positions = positions + _clip_norm(
            rng.normal(scale=spec.noise_sigma, size=positions.shape), limit
        )
        normals = normals + _clip_norm(
            rng.normal(scale=spec.noise_sigma, size=normals.shape), limit
        )
    order = rng.permutation(spec.n_points)
    cloud = PointCloud(
        positions=positions[order], features=normals[order], labels=labels[order]
    )
    return cloud, infos


def generate_scene(spec: SyntheticSceneSpec) -> PointCloud:
    return generate_scene_with_info(spec)[0]


def synthetic_dataset(
    n_scenes: int = 8,
    n_points: int = 2048,
    seed: int = 7,
    noise_sigma: float = 0.02,
    extent: float = 2.0,
) -> list:
    """Independent scenes; scene i derives its stream from (seed, i)."""
    return [
        generate_scene(
            SyntheticSceneSpec(
                n_points=n_points,
                seed=(seed, i),
                noise_sigma=noise_sigma,
                extent=extent,
            )
        )
        for i in range(n_scenes)
    ]


# ---------------------------------------------------------------------------
# Room block splitting
# ---------------------------------------------------------------------------


def split_blocks(room: PointCloud, block: float = 2.0, pad: float = 0.5) -> list:
    """Tile the room into block x block columns in x-y, full z extent.

    Each returned cloud contains the block's own points (unmasked) plus
    context points within ``pad`` of its footprint (masked out of loss and
    prediction). Tiling is anchored at the room's min corner; every point is
    owned by exactly one block. Blocks owning no points are skipped.
    """
    if not block > 0:
        raise ConfigError(f"block size must be positive, got {block}")
    if pad < 0:
        raise ConfigError(f"pad must be >= 0, got {pad}")
    pos = room.positions
    x0, y0 = pos[:, 0].min(), pos[:, 1].min()
    span_x = pos[:, 0].max() - x0
    span_y = pos[:, 1].max() - y0
    nbx = max(1, math.ceil(span_x / block))
    nby = max(1, math.ceil(span_y / block))
    bx = np.clip((pos[:, 0] - x0) // block, 0, nbx - 1).astype(np.int64)
    by = np.clip((pos[:, 1] - y0) // block, 0, nby - 1).astype(np.int64)

    blocks = []
    for i in range(nbx):
        for j in range(nby):
            owned = (bx == i) & (by == j)
            if not owned.any():
                continue
            lo_x, hi_x = x0 + i * block - pad, x0 + (i + 1) * block + pad
            lo_y, hi_y = y0 + j * block - pad, y0 + (j + 1) * block + pad
            inside = (
                (pos[:, 0] >= lo_x)
                & (pos[:, 0] <= hi_x)
                & (pos[:, 1] >= lo_y)
                & (pos[:, 1] <= hi_y)
            )
            mask = owned[inside]
            if room.mask is not None:
                mask = mask & room.mask[inside]
            blocks.append(
                PointCloud(
                    positions=pos[inside].copy(),
                    features=room.features[inside].copy(),
                    labels=None if room.labels is None else room.labels[inside].copy(),
                    mask=mask,
                )
            )
    return blocks
