"""Voxelization against a dict-based brute-force reference, plus volume ops."""

import numpy as np
import pytest

import pvcnet.tensor as T
from pvcnet.errors import ConfigError, DimensionError, DomainError
from pvcnet.geometry import (
    GridSpec,
    PointCloud,
    build_volume,
    devoxelize,
    normalize_cloud,
    voxelize,
)
from pvcnet.tensor import GradTape, Tensor

# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


def voxelize_oracle(positions: np.ndarray, g: int):
    """Group points into cells one at a time with plain Python."""
    mins = positions.min(axis=0)
    spans = positions.max(axis=0) - mins
    spans = np.where(spans > 0, spans, 1.0)
    cell = spans / g
    groups: dict[tuple, list] = {}
    for i, p in enumerate(positions):
        ijk = tuple(
            int(min(g - 1, max(0, np.floor((p[a] - mins[a]) / cell[a])))) for a in range(3)
        )
        groups.setdefault(ijk, []).append(i)
    return groups, mins, cell


# ---------------------------------------------------------------------------
# Voxelization
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
@pytest.mark.parametrize("g", [1, 2, 4, 7])
def test_voxelize_matches_bruteforce_grouping(seed, g):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3.0, 5.0, size=(rng.integers(1, 200), 3))
    grid = voxelize(pts, GridSpec(g))
    groups, mins, cell = voxelize_oracle(pts, g)

    assert grid.n_voxels == len(groups)
    np.testing.assert_allclose(grid.mins, mins, rtol=1e-12)
    np.testing.assert_allclose(grid.cell, cell, rtol=1e-12)
    for m in range(grid.n_voxels):
        key = tuple(int(c) for c in grid.coords[m])
        assert list(grid.members_of(m)) == groups[key]


@pytest.mark.parametrize("seed", [4, 5])
def test_voxel_ids_sorted_and_members_partition(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(300, 3))
    grid = voxelize(pts, GridSpec(5))
    assert np.all(np.diff(grid.flat_ids) > 0)
    assert sorted(grid.members.tolist()) == list(range(300))
    for m in range(grid.n_voxels):
        mem = grid.members_of(m)
        assert np.all(np.diff(mem) > 0)  # ascending point order
        assert np.all(grid.point_to_voxel[mem] == m)
    flat = (grid.coords[:, 0] * 5 + grid.coords[:, 1]) * 5 + grid.coords[:, 2]
    np.testing.assert_array_equal(flat, grid.flat_ids)


def test_voxel_centers_formula():
    pts = np.array([[0.0, 0.0, 0.0], [4.0, 2.0, 8.0]])
    grid = voxelize(pts, GridSpec(4))
    np.testing.assert_allclose(grid.cell, [1.0, 0.5, 2.0], rtol=1e-12)
    np.testing.assert_allclose(
        grid.centers, grid.mins + (grid.coords + 0.5) * grid.cell, rtol=1e-12
    )
    np.testing.assert_allclose(grid.centers[0], [0.5, 0.25, 1.0], rtol=1e-12)


def test_upper_boundary_point_clamps_into_last_cell():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    grid = voxelize(pts, GridSpec(8))
    np.testing.assert_array_equal(grid.coords[grid.point_to_voxel[1]], [7, 7, 7])


def test_degenerate_axis_collapses_to_cell_zero():
    rng = np.random.default_rng(6)
    pts = rng.uniform(size=(50, 3))
    pts[:, 2] = 0.25  # flat in z
    grid = voxelize(pts, GridSpec(4))
    assert np.all(grid.coords[:, 2] == 0)
    assert np.all(grid.cell > 0)


def test_single_cell_grid_holds_everything():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(64, 3))
    grid = voxelize(pts, GridSpec(1))
    assert grid.n_voxels == 1
    assert np.all(grid.point_to_voxel == 0)
    np.testing.assert_array_equal(grid.members, np.arange(64))


def test_voxelize_input_validation():
    with pytest.raises(DomainError):
        voxelize(np.zeros((0, 3)), GridSpec(2))
    with pytest.raises(DimensionError):
        voxelize(np.zeros((4, 2)), GridSpec(2))
    with pytest.raises(DomainError):
        voxelize(np.array([[0.0, 0.0, np.nan]]), GridSpec(2))
    with pytest.raises(ConfigError):
        GridSpec(0)
    with pytest.raises(ConfigError):
        GridSpec(2.5)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def test_normalize_maps_into_unit_cube():
    rng = np.random.default_rng(8)
    pts = rng.uniform(-10.0, 30.0, size=(100, 3))
    scaled, mins, spans = normalize_cloud(pts)
    assert scaled.min() >= 0.0 and scaled.max() <= 1.0
    np.testing.assert_allclose(scaled.min(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(scaled.max(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(scaled * spans + mins, pts, rtol=1e-10, atol=1e-10)


def test_normalize_flat_axis_maps_to_zero():
    pts = np.array([[1.0, 2.0, 7.5], [3.0, 4.0, 7.5]])
    scaled, _, spans = normalize_cloud(pts)
    np.testing.assert_array_equal(scaled[:, 2], [0.0, 0.0])
    assert spans[2] == 1.0


def test_normalize_preserves_dtype():
    pts = np.random.default_rng(9).uniform(size=(10, 3)).astype(np.float32)
    scaled, mins, spans = normalize_cloud(pts)
    assert scaled.dtype == np.float32


# ---------------------------------------------------------------------------
# Dense volumes and devoxelization
# ---------------------------------------------------------------------------


def test_build_volume_places_features_at_cells():
    rng = np.random.default_rng(10)
    pts = rng.uniform(size=(40, 3))
    grid = voxelize(pts, GridSpec(3))
    feats = rng.normal(size=(grid.n_voxels, 5))
    vol = build_volume(grid, Tensor(feats))
    assert vol.shape == (5, 3, 3, 3)
    dense = np.zeros((3, 3, 3, 5))
    for m, (u, v, w) in enumerate(grid.coords):
        dense[u, v, w] = feats[m]
    np.testing.assert_allclose(vol.data, np.moveaxis(dense, -1, 0), rtol=1e-12)
    occupied = np.zeros((3, 3, 3), dtype=bool)
    occupied[tuple(grid.coords.T)] = True
    assert np.all(vol.data[:, ~occupied] == 0)


def test_devoxelize_round_trips_voxel_features():
    rng = np.random.default_rng(11)
    pts = rng.uniform(size=(60, 3))
    grid = voxelize(pts, GridSpec(4))
    feats = rng.normal(size=(grid.n_voxels, 3))
    out = devoxelize(build_volume(grid, Tensor(feats)), grid)
    np.testing.assert_allclose(out.data, feats[grid.point_to_voxel], rtol=1e-12)


def test_volume_pipeline_gradient_matches_numeric():
    rng = np.random.default_rng(12)
    pts = rng.uniform(size=(25, 3))
    grid = voxelize(pts, GridSpec(2))
    feats = rng.normal(size=(grid.n_voxels, 2))
    w = rng.normal(size=(25, 2))
    tf = Tensor(feats, requires_grad=True)
    with GradTape() as tape:
        out = devoxelize(build_volume(grid, tf), grid)
    tape.backward(out, seed=w)

    def fwd() -> float:
        return float(np.sum(feats[grid.point_to_voxel] * w))

    h = 1e-6
    g = np.zeros_like(feats)
    flat, gflat = feats.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = fwd()
        flat[j] = orig - h
        fm = fwd()
        flat[j] = orig
        gflat[j] = (fp - fm) / (2 * h)
    np.testing.assert_allclose(tf.grad, g, rtol=1e-5, atol=1e-8)


def test_volume_shape_validation():
    grid = voxelize(np.random.default_rng(13).uniform(size=(10, 3)), GridSpec(2))
    with pytest.raises(DimensionError):
        build_volume(grid, Tensor(np.zeros((grid.n_voxels + 1, 4))))
    with pytest.raises(DimensionError):
        devoxelize(Tensor(np.zeros((4, 3, 3, 3))), grid)


# ---------------------------------------------------------------------------
# PointCloud container
# ---------------------------------------------------------------------------


def test_point_cloud_validates_shapes():
    pos = np.zeros((4, 3))
    PointCloud(pos, np.zeros((4, 2)), labels=np.zeros(4, dtype=int), mask=np.ones(4, dtype=bool))
    with pytest.raises(DimensionError):
        PointCloud(np.zeros((4, 2)), np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        PointCloud(pos, np.zeros((3, 2)))
    with pytest.raises(DimensionError):
        PointCloud(pos, np.zeros((4, 2)), labels=np.zeros(3, dtype=int))
    with pytest.raises(DomainError):
        PointCloud(pos * np.nan, np.zeros((4, 2)))


def test_point_cloud_counts():
    cloud = PointCloud(np.zeros((5, 3)), np.ones((5, 4)))
    assert cloud.n_points == 5
    assert cloud.n_features == 4
