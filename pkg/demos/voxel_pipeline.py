"""From points to a dense volume and back: normalize, voxelize, convolve,
devoxelize. This is the voxel half of a point-voxel layer, run step by step.

Run with: python demos/voxel_pipeline.py
"""

import numpy as np

from pvcnet.geometry import GridSpec, build_volume, devoxelize, normalize_cloud, voxelize
from pvcnet.tensor import Tensor, conv3d, relu

rng = np.random.default_rng(3)

# A lopsided cloud: a dense blob plus a sparse shell around it.
blob = rng.normal(0.0, 0.2, size=(600, 3))
shell = rng.normal(0.0, 1.0, size=(200, 3))
shell /= np.linalg.norm(shell, axis=1, keepdims=True)
positions = np.vstack([blob, shell * 1.5])

# Positions are mapped into the unit cube before gridding (per-axis, so
# flat clouds stay usable); training applies the same step once per cloud.
normalized, mins, spans = normalize_cloud(positions)
print(f"mins {np.round(mins, 2)}, spans {np.round(spans, 2)}")

# voxelize() floors normalized coordinates onto a G^3 grid and keeps only
# occupied cells: each point knows its voxel, each voxel its point count.
grid = voxelize(normalized, GridSpec(8))
print(f"{grid.n_points} points -> {grid.n_voxels} occupied cells of {8 ** 3}")
print("largest cell holds", int(grid.counts.max()), "points")

# Per-voxel features here are just (mean height, point count).
heights = np.zeros((grid.n_voxels, 1))
np.add.at(heights[:, 0], grid.point_to_voxel, normalized[:, 2])
heights[:, 0] /= grid.counts
feats = Tensor(np.hstack([heights, grid.counts[:, None] / grid.n_points]))

# build_volume scatters occupied-cell rows into the dense (C, G, G, G)
# block that convolution wants; empty cells stay zero.
volume = build_volume(grid, feats)
print("dense volume shape:", volume.shape)

kernels = Tensor(rng.standard_normal((4, 2, 3, 3, 3)) * 0.1)
bias = Tensor(np.zeros(4))
convolved = relu(conv3d(volume, kernels, bias))

# devoxelize reads each point's cell back out of the volume: the points
# come back in their original order, now carrying neighborhood context.
per_point = devoxelize(convolved, grid)
print("per-point features:", per_point.shape)
print("rows for two points sharing a cell are identical:",
      bool(np.array_equal(per_point.data[0], per_point.data[1]))
      if grid.point_to_voxel[0] == grid.point_to_voxel[1] else "(different cells)")
