"""Latency and memory benchmark harness.

Times the inference path only: geometry construction plus the network forward
pass, with no gradient tape. Dataset generation, parameter init, and I/O sit
outside the timed region. Peak resident memory is sampled by a background
thread for the duration of each configuration's timed runs.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np
import psutil

from .neighbors import knn_bruteforce, knn_dilated
from .network import (
    NetworkConfig,
    config_to_dict,
    count_parameters,
    forward,
    init_network_params,
    network_geometry,
)

DEFAULT_WIDTHS = (0.5, 0.75, 1.0)
DEFAULT_SIZES = (2048, 8192)


@dataclass
class BenchRow:
    width: float
    n_points: int
    median_ms: float
    p95_ms: float
    peak_rss_mb: float
    param_count: int


@dataclass
class BenchReport:
    rows: list
    runs: int
    warmup: int

    def table(self) -> str:
        header = f"{'width':>6} {'points':>8} {'median_ms':>10} {'p95_ms':>10} {'peak_rss_mb':>12} {'params':>10}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.width:>6.2f} {r.n_points:>8d} {r.median_ms:>10.2f} "
                f"{r.p95_ms:>10.2f} {r.peak_rss_mb:>12.1f} {r.param_count:>10d}"
            )
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["width,n_points,median_ms,p95_ms,peak_rss_mb,param_count"]
        for r in self.rows:
            lines.append(
                f"{r.width},{r.n_points},{r.median_ms:.3f},{r.p95_ms:.3f},"
                f"{r.peak_rss_mb:.1f},{r.param_count}"
            )
        return "\n".join(lines) + "\n"


class PeakRssSampler:
    """Background thread tracking the process's max resident set size."""

    def __init__(self, interval: float = 0.002):
        self._interval = interval
        self._proc = psutil.Process()
        self._stop = threading.Event()
        self._thread = None
        self.peak = 0

    def _run(self):
        while not self._stop.is_set():
            self.peak = max(self.peak, self._proc.memory_info().rss)
            self._stop.wait(self._interval)

    def __enter__(self):
        self.peak = self._proc.memory_info().rss
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, exc_type, exc, tb):
        self._stop.set()
        self._thread.join()
        self.peak = max(self.peak, self._proc.memory_info().rss)

    @property
    def peak_mb(self) -> float:
        return self.peak / (1024 * 1024)


def _bench_input(n_points: int, in_features: int, seed):
    rng = np.random.default_rng(seed)
    positions = rng.random((n_points, 3))
    features = rng.standard_normal((n_points, in_features)).astype(np.float32)
    return positions, features


def time_forward(
    config: NetworkConfig,
    params,
    positions: np.ndarray,
    features: np.ndarray,
    runs: int = 20,
    warmup: int = 3,
    knn_method: str = "auto",
):
    """Latencies (ms) of geometry + forward, and peak RSS (MB) while timing."""

    def one_pass():
        geometry = network_geometry(positions, config, method=knn_method)
        return forward(config, params, positions, features, geometry=geometry)

    for _ in range(warmup):
        one_pass()
    latencies = []
    with PeakRssSampler() as sampler:
        for _ in range(runs):
            t0 = time.perf_counter()
            one_pass()
            latencies.append((time.perf_counter() - t0) * 1e3)
    return latencies, sampler.peak_mb


def run_benchmark(
    widths=DEFAULT_WIDTHS,
    sizes=DEFAULT_SIZES,
    num_classes: int = 13,
    runs: int = 20,
    warmup: int = 3,
    seed: int = 0,
    base_config: NetworkConfig | None = None,
    knn_method: str = "auto",
) -> BenchReport:
    """Sweep width multipliers and point counts on randomly initialized models."""
    rows = []
    for width in widths:
        if base_config is None:
            config = NetworkConfig(num_classes=num_classes, width=width)
        else:
            config = NetworkConfig(**{**config_to_dict(base_config), "width": width})
        params = init_network_params(np.random.default_rng(seed), config)
        n_params = count_parameters(params)
        for n_points in sizes:
            positions, features = _bench_input(n_points, config.in_features, (seed, n_points))
            latencies, rss = time_forward(
                config, params, positions, features, runs=runs, warmup=warmup,
                knn_method=knn_method,
            )
            rows.append(
                BenchRow(
                    width=width,
                    n_points=n_points,
                    median_ms=float(np.median(latencies)),
                    p95_ms=float(np.percentile(latencies, 95)),
                    peak_rss_mb=rss,
                    param_count=n_params,
                )
            )
    return BenchReport(rows=rows, runs=runs, warmup=warmup)


# ---------------------------------------------------------------------------
# Neighbor-search engine comparison
# ---------------------------------------------------------------------------


@dataclass
class KnnComparison:
    n_points: int
    n_queries: int
    k: int
    grid_seconds: float
    brute_seconds: float
    identical: bool

    @property
    def speedup(self) -> float:
        return self.brute_seconds / self.grid_seconds

    def line(self) -> str:
        return (
            f"knn N={self.n_points} Q={self.n_queries} k={self.k}: "
            f"grid {self.grid_seconds:.2f}s, brute {self.brute_seconds:.2f}s, "
            f"{self.speedup:.1f}x, identical={self.identical}"
        )


def compare_knn(
    n_points: int = 100_000, n_queries: int = 10_000, k: int = 32, seed: int = 0
) -> KnnComparison:
    rng = np.random.default_rng(seed)
    points = rng.random((n_points, 3))
    queries = rng.random((n_queries, 3))

    t0 = time.perf_counter()
    grid = knn_dilated(queries, points, k, method="grid")
    grid_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    brute = knn_bruteforce(queries, points, k)
    brute_s = time.perf_counter() - t0

    return KnnComparison(
        n_points=n_points,
        n_queries=n_queries,
        k=k,
        grid_seconds=grid_s,
        brute_seconds=brute_s,
        identical=bool(np.array_equal(grid, brute)),
    )
