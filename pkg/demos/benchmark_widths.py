"""Latency and memory across width multipliers, and the neighbor-search
engine comparison, at a size that finishes quickly.

Run with: python demos/benchmark_widths.py   (about a minute)

The full-size sweep (N up to 8192, 20 runs per row) is the CLI's job:
pvcnet bench --sizes 2048,8192
"""

from pvcnet.bench import compare_knn, run_benchmark
from pvcnet.network import NetworkConfig

# Each row times one inference pass: voxelization, neighbor search, and
# the forward network, with no gradient tape. Parameter counts rise
# quadratically with width, latency roughly linearly at fixed N.
base = NetworkConfig(num_classes=13, grid_sizes=(16, 8, 4, 2))
report = run_benchmark(
    widths=(0.25, 0.5, 1.0),
    sizes=(1024, 2048),
    runs=5,
    warmup=2,
    base_config=base,
)
print(report.table())

ordered = [r.median_ms for r in report.rows if r.n_points == 2048]
print("\nmedians increase with width at N=2048:",
      all(a < b for a, b in zip(ordered, ordered[1:])))

# The grid engine and brute force return identical neighbor tables; the
# speed gap is what justifies the hashing machinery.
print()
print(compare_knn(n_points=50_000, n_queries=5_000, k=32).line())
