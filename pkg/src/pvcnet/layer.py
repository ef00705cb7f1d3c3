"""One point-voxel convolution layer.

The layer runs two branches over the same N points and fuses them:

- voxel branch: point features are aggregated onto the occupied voxels of a
  G-cell grid (attention-weighted neighbors of each voxel center, or the
  plain member average as the ablation baseline), lifted to the output
  width, convolved as a dense volume, and read back to the points;
- point branch: a per-point linear + relu, no cross-point interaction.

Fusion is either a learned channel-wise gate pair that sums to one per
channel (the feature selection module) or a plain sum when that switch is
off. The point count never changes across a layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .geometry import GridSpec, VoxelGrid, build_volume, devoxelize, voxelize
from .neighbors import NeighborConfig, knn_dilated
from .tensor import (
    Tensor,
    concat,
    conv3d,
    gather_rows,
    matmul,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scatter_add_rows,
    softmax_pairwise,
)


@dataclass
class PvcLayerParams:
    """Learnable tensors of one layer.

    The attention map takes concat(offset, feature) rows of width 3+C_in to
    per-channel weights of width C_in. The voxel-branch linear lifts C_in to
    C_out before the 3x3x3 convolution so both branches emit C_out. The
    fusion gate bottleneck is d = max(C_out // 4, 1).
    """

    attn_w: Tensor
    attn_b: Tensor
    point_w: Tensor
    point_b: Tensor
    voxel_w: Tensor
    voxel_b: Tensor
    conv_k: Tensor
    conv_b: Tensor
    fsm_wfc: Tensor
    fsm_w1: Tensor
    fsm_w2: Tensor

    @property
    def c_in(self) -> int:
        return self.point_w.shape[0]

    @property
    def c_out(self) -> int:
        return self.point_w.shape[1]

    def named(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return [
            (prefix + "attn_w", self.attn_w),
            (prefix + "attn_b", self.attn_b),
            (prefix + "point_w", self.point_w),
            (prefix + "point_b", self.point_b),
            (prefix + "voxel_w", self.voxel_w),
            (prefix + "voxel_b", self.voxel_b),
            (prefix + "conv_k", self.conv_k),
            (prefix + "conv_b", self.conv_b),
            (prefix + "fsm_wfc", self.fsm_wfc),
            (prefix + "fsm_w1", self.fsm_w1),
            (prefix + "fsm_w2", self.fsm_w2),
        ]


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = float(np.sqrt(6.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_layer_params(
    rng: np.random.Generator, c_in: int, c_out: int, dtype=np.float32, k_neighbors: int = 32
) -> PvcLayerParams:
    """Fresh layer parameters: uniform +-sqrt(6/fan_in) weights, zero biases.

    The attention linear feeds a K-term weighted sum, so its effective
    fan-in is (3+C_in)*K^2 rather than its row width alone. Drawing it at
    the plain width makes voxel features grow ~K-fold per layer and 32-bit
    training overflows after a few layers.

    The draw order is fixed so a given generator state always yields the
    same parameters, independent of which branches a config enables.
    """
    d = max(c_out // 4, 1)
    return PvcLayerParams(
        attn_w=_uniform_init(rng, (3 + c_in, c_in), (3 + c_in) * k_neighbors * k_neighbors, dtype),
        attn_b=_zeros((c_in,), dtype),
        point_w=_uniform_init(rng, (c_in, c_out), c_in, dtype),
        point_b=_zeros((c_out,), dtype),
        voxel_w=_uniform_init(rng, (c_in, c_out), c_in, dtype),
        voxel_b=_zeros((c_out,), dtype),
        conv_k=_uniform_init(rng, (c_out, c_out, 3, 3, 3), c_out * 27, dtype),
        conv_b=_zeros((c_out,), dtype),
        fsm_wfc=_uniform_init(rng, (c_out, d), c_out, dtype),
        fsm_w1=_uniform_init(rng, (d, c_out), d, dtype),
        fsm_w2=_uniform_init(rng, (d, c_out), d, dtype),
    )


@dataclass
class LayerGeometry:
    """Connectivity of one layer for one cloud: grid plus voxel-center neighbors.

    Positions never change during training, so this can be computed once per
    cloud and reused every epoch.
    """

    grid: VoxelGrid
    neighbors: np.ndarray  # (M, K) point indices, K dilated nearest per voxel center


def layer_geometry(
    positions: np.ndarray,
    grid_resolution: int,
    neighbors: NeighborConfig,
    method: str = "auto",
) -> LayerGeometry:
    grid = voxelize(positions, GridSpec(grid_resolution))
    nbrs = knn_dilated(grid.centers, positions, neighbors.k, neighbors.dilation, method=method)
    return LayerGeometry(grid=grid, neighbors=nbrs)


# ---------------------------------------------------------------------------
# Aggregation onto voxels
# ---------------------------------------------------------------------------


def aggregate_local(
    grid: VoxelGrid,
    positions: np.ndarray,
    features: Tensor,
    nbrs: np.ndarray,
    params: PvcLayerParams,
) -> Tensor:
    """Attention-weighted neighbor sum per occupied voxel, (M, C_in).

    For voxel center P_c with neighbor points P_k: the weight row is
    relu(linear(concat(P_k - P_c, f_k))) and the voxel feature is the sum
    over k of weight * f_k, channel by channel.
    """
    if nbrs.ndim != 2 or nbrs.shape[0] != grid.n_voxels:
        raise DimensionError(
            f"neighbor table must be ({grid.n_voxels}, K), got {nbrs.shape}"
        )
    m, k = nbrs.shape
    offsets = positions[nbrs.reshape(-1)] - np.repeat(grid.centers, k, axis=0)
    f_k = gather_rows(features, nbrs.reshape(-1))
    pre = matmul(concat([Tensor(offsets.astype(features.dtype)), f_k], axis=1), params.attn_w)
    weights = relu(pre + params.attn_b)
    weighted = weights * f_k
    return reduce_sum(reshape(weighted, (m, k, features.shape[1])), 1)


def aggregate_average(grid: VoxelGrid, features: Tensor) -> Tensor:
    """Plain mean of each voxel's member-point features, (M, C_in)."""
    if features.ndim != 2 or features.shape[0] != grid.n_points:
        raise DimensionError(
            f"features must be ({grid.n_points}, C), got {features.shape}"
        )
    sums = scatter_add_rows(
        Tensor(np.zeros((grid.n_voxels, features.shape[1]), dtype=features.dtype)),
        grid.point_to_voxel,
        features,
    )
    inv = (1.0 / grid.counts).astype(features.dtype)[:, None]
    return sums * Tensor(inv)


# ---------------------------------------------------------------------------
# Branches and fusion
# ---------------------------------------------------------------------------


def voxel_branch(grid: VoxelGrid, voxel_features: Tensor, params: PvcLayerParams) -> Tensor:
    """Lift aggregated voxel features, convolve the dense volume, read back.

    (M, C_in) -> linear+relu -> (M, C_out) -> volume -> 3x3x3 conv + relu
    -> (N, C_out) at the member points.
    """
    lifted = relu(matmul(voxel_features, params.voxel_w) + params.voxel_b)
    volume = relu(conv3d(build_volume(grid, lifted), params.conv_k, params.conv_b))
    return devoxelize(volume, grid)


def point_branch(features: Tensor, params: PvcLayerParams) -> Tensor:
    """Per-point linear + relu; rows never interact."""
    return relu(matmul(features, params.point_w) + params.point_b)


def fsm_fuse(f_p: Tensor, f_v: Tensor, params: PvcLayerParams) -> Tensor:
    """Gate the two branches channel-wise; the gate pair sums to 1 per channel.

    The gates come from the global state of the fused cloud: mean over
    points -> bottleneck linear + relu -> two linear maps -> pairwise
    softmax. One gate pair per channel is shared by all points.
    """
    if f_p.shape != f_v.shape:
        raise DimensionError(f"branch shapes differ: {f_p.shape} vs {f_v.shape}")
    fused = f_p + f_v
    pooled = reshape(reduce_mean(fused, 0), (1, f_p.shape[1]))
    s = relu(matmul(pooled, params.fsm_wfc))
    gate_p, gate_v = softmax_pairwise(matmul(s, params.fsm_w1), matmul(s, params.fsm_w2))
    return gate_p * f_p + gate_v * f_v


def pvc_forward(
    positions: np.ndarray,
    features: Tensor,
    params: PvcLayerParams,
    grid_resolution: int,
    neighbors: NeighborConfig,
    *,
    local_aggregation: bool = True,
    fsm: bool = True,
    geometry: LayerGeometry | None = None,
    knn_method: str = "auto",
) -> Tensor:
    """Full layer: aggregate -> voxel branch, point branch -> fuse. (N, C_out).

    ``local_aggregation`` False replaces attention aggregation with the
    member average; ``fsm`` False replaces gating with a plain sum. Both
    fallbacks are the ablation baselines. Pass a precomputed ``geometry``
    to skip re-running voxelization and neighbor search.
    """
    if geometry is None:
        geometry = layer_geometry(positions, grid_resolution, neighbors, method=knn_method)
    if local_aggregation:
        voxel_feats = aggregate_local(
            geometry.grid, positions, features, geometry.neighbors, params
        )
    else:
        voxel_feats = aggregate_average(geometry.grid, features)
    f_v = voxel_branch(geometry.grid, voxel_feats, params)
    f_p = point_branch(features, params)
    if fsm:
        return fsm_fuse(f_p, f_v, params)
    return f_p + f_v
