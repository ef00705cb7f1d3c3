"""Benchmark harness: report shape, formats, RSS sampling, KNN comparison."""

import csv
import io
import time

import numpy as np

from pvcnet.bench import PeakRssSampler, compare_knn, run_benchmark
from pvcnet.network import NetworkConfig, count_parameters, init_network_params

TINY = NetworkConfig(
    num_classes=2,
    num_layers=2,
    grid_sizes=(4, 2),
    k_neighbors=4,
    dilations=(1, 1),
    base_channels=8,
    width=1.0,
)


def tiny_report(widths=(0.5, 1.0), sizes=(64, 128), runs=2, warmup=1):
    return run_benchmark(
        widths=widths, sizes=sizes, runs=runs, warmup=warmup, base_config=TINY
    )


def test_row_count_is_widths_times_sizes():
    report = tiny_report()
    assert len(report.rows) == 4
    assert [(r.width, r.n_points) for r in report.rows] == [
        (0.5, 64), (0.5, 128), (1.0, 64), (1.0, 128),
    ]


def test_param_counts_depend_on_width_only():
    report = tiny_report()
    by_width = {}
    for row in report.rows:
        by_width.setdefault(row.width, set()).add(row.param_count)
    assert all(len(counts) == 1 for counts in by_width.values())
    assert min(by_width[0.5]) < min(by_width[1.0])


def test_param_count_matches_fresh_init():
    report = tiny_report(widths=(1.0,), sizes=(64,), runs=1, warmup=0)
    params = init_network_params(np.random.default_rng(0), TINY)
    assert report.rows[0].param_count == count_parameters(params)


def test_latencies_are_positive_and_ordered_stats():
    report = tiny_report()
    for row in report.rows:
        assert 0 < row.median_ms <= row.p95_ms
        assert row.peak_rss_mb > 0


def test_table_has_header_and_one_line_per_row():
    report = tiny_report()
    lines = report.table().splitlines()
    assert len(lines) == 2 + len(report.rows)
    assert lines[0].split() == ["width", "points", "median_ms", "p95_ms", "peak_rss_mb", "params"]


def test_csv_parses_with_fixed_columns():
    report = tiny_report()
    rows = list(csv.DictReader(io.StringIO(report.to_csv())))
    assert len(rows) == len(report.rows)
    assert list(rows[0]) == ["width", "n_points", "median_ms", "p95_ms", "peak_rss_mb", "param_count"]
    assert int(rows[0]["n_points"]) == 64
    assert float(rows[0]["median_ms"]) > 0


def test_same_seed_same_param_counts():
    a = tiny_report(widths=(0.5, 1.0), sizes=(64,), runs=1, warmup=0)
    b = tiny_report(widths=(0.5, 1.0), sizes=(64,), runs=1, warmup=0)
    assert [r.param_count for r in a.rows] == [r.param_count for r in b.rows]


def test_peak_rss_sampler_sees_allocation():
    with PeakRssSampler() as idle:
        time.sleep(0.02)
    with PeakRssSampler() as sampler:
        block = np.ones(40_000_000, dtype=np.float64)  # ~305 MB
        block[::4096] += 1.0
        time.sleep(0.05)
        del block
    assert sampler.peak_mb > idle.peak_mb + 200


def test_compare_knn_engines_agree():
    cmp = compare_knn(n_points=2000, n_queries=500, k=8, seed=1)
    assert cmp.identical
    assert cmp.grid_seconds > 0 and cmp.brute_seconds > 0
    assert "identical=True" in cmp.line()
