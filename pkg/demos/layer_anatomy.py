"""Inside one point-voxel layer: attention aggregation onto voxels, the two
branches, and the channel gates that fuse them.

Run with: python demos/layer_anatomy.py
"""

import numpy as np

from pvcnet.layer import (
    aggregate_average,
    aggregate_local,
    fsm_fuse,
    init_layer_params,
    layer_geometry,
    point_branch,
    pvc_forward,
    voxel_branch,
)
from pvcnet.neighbors import NeighborConfig
from pvcnet.tensor import Tensor, matmul, relu, softmax_pairwise

rng = np.random.default_rng(7)
n, c_in, c_out = 128, 4, 8

positions = rng.random((n, 3))
features = Tensor(rng.standard_normal((n, c_in)))
params = init_layer_params(rng, c_in, c_out, dtype=np.float64, k_neighbors=8)

# Geometry holds everything position-derived: the occupied voxel grid and
# each voxel center's dilated nearest points. It never changes during
# training, so the trainer computes it once per cloud.
geometry = layer_geometry(positions, 4, NeighborConfig(k=8, dilation=2))
m = geometry.grid.n_voxels
print(f"{n} points, {m} occupied voxels, neighbor table {geometry.neighbors.shape}")

# Attention aggregation scores each neighbor from (offset to center,
# feature) and sums weighted features per voxel. The ablation baseline
# just averages a voxel's own member points instead.
attn = aggregate_local(geometry.grid, positions, features, geometry.neighbors, params)
mean = aggregate_average(geometry.grid, features)
print("attention vs average, first voxel:")
print("  attention:", np.round(attn.data[0], 3))
print("  average:  ", np.round(mean.data[0], 3))

# The voxel branch lifts aggregated features to C_out, convolves the dense
# volume, and reads the result back at the points. The point branch is a
# per-point linear + relu with no cross-talk.
f_v = voxel_branch(geometry.grid, attn, params)
f_p = point_branch(features, params)
print(f"branch outputs: voxel {f_v.shape}, point {f_p.shape}")

# Fusion gates: pool the summed branches, squeeze through a bottleneck,
# and emit one softmax pair per channel. Gates sum to one, so the fused
# features interpolate between the branches channel by channel.
pooled = Tensor((f_p.data + f_v.data).mean(axis=0, keepdims=True))
s = relu(matmul(pooled, params.fsm_wfc))
gate_p, gate_v = softmax_pairwise(matmul(s, params.fsm_w1), matmul(s, params.fsm_w2))
print("point-branch gate per channel:", np.round(gate_p.data[0], 3))
print("gate sums:", np.round((gate_p.data + gate_v.data)[0], 6))

fused = fsm_fuse(f_p, f_v, params)
same = pvc_forward(positions, features, params, 4, NeighborConfig(k=8, dilation=2),
                   geometry=geometry)
print("fsm_fuse == full layer output:", bool(np.array_equal(fused.data, same.data)))
