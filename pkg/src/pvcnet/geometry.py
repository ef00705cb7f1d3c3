"""Point-cloud geometry: normalization, voxelization, dense volumes.

Cells are sized from the cloud's own bounding box (cell = span / resolution,
a flat axis counts as span 1), points on the upper boundary are clamped into
the last cell, and occupied voxels are kept sorted by flattened cell id with
member points in ascending point order. Dense volumes place per-voxel
features at their cells; devoxelization reads each point's owning cell back
out (nearest cell, no interpolation). Both directions run through the taped
gather/scatter ops, so volumes are differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DomainError
from .tensor import Tensor, gather_rows, reshape, scatter_add_rows, transpose


@dataclass
class PointCloud:
    """Positions with per-point features and optional labels / loss mask.

    ``mask`` marks the points that count toward the loss (True = included);
    padding points written by block splitting carry False.
    """

    positions: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions)
        self.features = np.asarray(self.features)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise DimensionError(f"positions must be (N, 3), got {self.positions.shape}")
        n = self.positions.shape[0]
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DimensionError(f"features must be (N, C) with N={n}, got {self.features.shape}")
        if not np.all(np.isfinite(self.positions)):
            raise DomainError("positions contain non-finite values")
        if not np.all(np.isfinite(self.features)):
            raise DomainError("features contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (n,):
                raise DimensionError(f"labels must be (N,) with N={n}, got {self.labels.shape}")
            self.labels = self.labels.astype(np.int64, copy=False)
        if self.mask is not None:
            self.mask = np.asarray(self.mask)
            if self.mask.shape != (n,):
                raise DimensionError(f"mask must be (N,) with N={n}, got {self.mask.shape}")
            self.mask = self.mask.astype(bool, copy=False)

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GridSpec:
    """Cubic voxel grid with ``resolution`` cells along each axis."""

    resolution: int

    def __post_init__(self):
        if not isinstance(self.resolution, (int, np.integer)) or self.resolution < 1:
            raise ConfigError(
                f"grid resolution must be a positive integer, got {self.resolution!r}"
            )

    @property
    def n_cells(self) -> int:
        return int(self.resolution) ** 3


@dataclass
class VoxelGrid:
    """Occupied cells of a voxelized cloud, sorted by flattened cell id."""

    spec: GridSpec
    mins: np.ndarray  # (3,) bounding-box minimum
    cell: np.ndarray  # (3,) per-axis cell edge length
    coords: np.ndarray  # (M, 3) integer cell coordinates
    flat_ids: np.ndarray  # (M,) coords flattened as u*G^2 + v*G + w, ascending
    point_to_voxel: np.ndarray  # (N,) row into coords for every point
    members: np.ndarray  # (N,) point ids grouped by voxel, ascending within each
    starts: np.ndarray  # (M+1,) member segment boundaries

    @property
    def n_voxels(self) -> int:
        return self.coords.shape[0]

    @property
    def n_points(self) -> int:
        return self.point_to_voxel.shape[0]

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.starts)

    @property
    def centers(self) -> np.ndarray:
        return self.mins + (self.coords + 0.5) * self.cell

    def members_of(self, voxel: int) -> np.ndarray:
        return self.members[self.starts[voxel] : self.starts[voxel + 1]]


def _check_positions(positions, op: str) -> np.ndarray:
    positions = np.asarray(positions)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise DimensionError(f"{op}: positions must be (N, 3), got {positions.shape}")
    if positions.shape[0] == 0:
        raise DomainError(f"{op}: point cloud is empty")
    if not np.all(np.isfinite(positions)):
        raise DomainError(f"{op}: positions contain non-finite values")
    return positions


def _safe_spans(positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mins = positions.min(axis=0)
    spans = positions.max(axis=0) - mins
    spans = np.where(spans > 0, spans, spans.dtype.type(1.0))
    return mins, spans


def normalize_cloud(positions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scale each axis of a cloud into [0, 1]; returns (scaled, mins, spans).

    Axes without extent keep span 1, so a flat cloud maps onto coordinate 0
    instead of dividing by zero. Scaling is per axis (anisotropic).
    """
    positions = _check_positions(positions, "normalize_cloud")
    mins, spans = _safe_spans(positions)
    return (positions - mins) / spans, mins, spans


def voxelize(positions, spec: GridSpec) -> VoxelGrid:
    """Assign every point to the cell floor((x - min) / cell), clamped to the grid."""
    positions = _check_positions(positions, "voxelize")
    g = int(spec.resolution)
    mins, spans = _safe_spans(positions)
    cell = spans / g
    ijk = np.floor((positions - mins) / cell).astype(np.int64)
    np.clip(ijk, 0, g - 1, out=ijk)
    flat = (ijk[:, 0] * g + ijk[:, 1]) * g + ijk[:, 2]

    vox_ids, point_to_voxel = np.unique(flat, return_inverse=True)
    point_to_voxel = point_to_voxel.reshape(-1)
    members = np.argsort(point_to_voxel, kind="stable").astype(np.int64)
    counts = np.bincount(point_to_voxel, minlength=vox_ids.size)
    starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    u, rem = np.divmod(vox_ids, g * g)
    v, w = np.divmod(rem, g)
    coords = np.stack([u, v, w], axis=1)
    return VoxelGrid(
        spec=spec,
        mins=mins,
        cell=cell,
        coords=coords,
        flat_ids=vox_ids.astype(np.int64),
        point_to_voxel=point_to_voxel.astype(np.int64),
        members=members,
        starts=starts,
    )


def build_volume(grid: VoxelGrid, voxel_features) -> Tensor:
    """Dense (C, G, G, G) volume with each voxel's feature at its cell.

    Unoccupied cells stay zero. Differentiable w.r.t. the voxel features.
    """
    if not isinstance(voxel_features, Tensor):
        voxel_features = Tensor(voxel_features)
    if voxel_features.ndim != 2 or voxel_features.shape[0] != grid.n_voxels:
        raise DimensionError(
            f"voxel features must be ({grid.n_voxels}, C), got {voxel_features.shape}"
        )
    g = int(grid.spec.resolution)
    c = voxel_features.shape[1]
    empty = Tensor(np.zeros((g**3, c), dtype=voxel_features.dtype))
    dense = scatter_add_rows(empty, grid.flat_ids, voxel_features)
    return reshape(transpose(dense), (c, g, g, g))


def devoxelize(volume, grid: VoxelGrid) -> Tensor:
    """Read each point's owning cell out of a dense volume, giving (N, C).

    The gradient scatters back over each cell's member points (the adjoint
    of the nearest-cell read).
    """
    if not isinstance(volume, Tensor):
        volume = Tensor(volume)
    g = int(grid.spec.resolution)
    if volume.ndim != 4 or volume.shape[1:] != (g, g, g):
        raise DimensionError(f"volume must be (C, {g}, {g}, {g}), got {volume.shape}")
    table = transpose(reshape(volume, (volume.shape[0], g**3)))
    ids = grid.flat_ids[grid.point_to_voxel]
    return gather_rows(table, ids)
