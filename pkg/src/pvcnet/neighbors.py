"""Exact k-nearest-neighbor search over point clouds.

Two interchangeable engines produce bit-identical results: a brute-force
scan and a uniform-grid spatial hash with an expanding ring search. Both
rank neighbors by squared euclidean distance with ties broken toward the
lower point index, and both evaluate the distance with the same float64
expression so the rankings agree exactly, not just approximately.

Dilated selection keeps every ``dilation``-th neighbor of the sorted list
(ranks 0, n, 2n, ...), widening the receptive field without more neighbors.
Clouds too small for the requested reach fall back to a reduced step, and
ranks past the last point repeat the farthest neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DomainError

_FULL_SORT_MAX_POINTS = 4096
_BRUTE_CHUNK = 128


@dataclass(frozen=True)
class NeighborConfig:
    """Neighborhood size ``k`` and sorted-rank step ``dilation``."""

    k: int = 32
    dilation: int = 1

    def __post_init__(self):
        if not isinstance(self.k, (int, np.integer)) or self.k < 1:
            raise ConfigError(f"neighbor count must be a positive integer, got {self.k!r}")
        if not isinstance(self.dilation, (int, np.integer)) or self.dilation < 1:
            raise ConfigError(f"dilation must be a positive integer, got {self.dilation!r}")


def _check_inputs(queries, points, k: int) -> tuple[np.ndarray, np.ndarray]:
    queries = np.asarray(queries)
    points = np.asarray(points)
    if queries.ndim != 2 or queries.shape[1] != 3:
        raise DimensionError(f"queries must be (Q, 3), got {queries.shape}")
    if points.ndim != 2 or points.shape[1] != 3:
        raise DimensionError(f"points must be (N, 3), got {points.shape}")
    if points.shape[0] == 0:
        raise DomainError("cannot search an empty point set")
    if k < 1:
        raise ConfigError(f"k must be positive, got {k}")
    if k > points.shape[0]:
        raise DomainError(f"k={k} exceeds the {points.shape[0]} available points")
    if not (np.all(np.isfinite(queries)) and np.all(np.isfinite(points))):
        raise DomainError("coordinates contain non-finite values")
    q64 = np.ascontiguousarray(queries, dtype=np.float64)
    p64 = np.ascontiguousarray(points, dtype=np.float64)
    return q64, p64


def _pair_d2(qx, qy, qz, px, py, pz):
    # Shared by both engines: identical expression, identical rounding.
    dx = qx - px
    dy = qy - py
    dz = qz - pz
    return dx * dx + dy * dy + dz * dz


def knn_bruteforce(queries, points, k: int) -> np.ndarray:
    """Indices (Q, k) of the k nearest points per query, nearest first."""
    q64, p64 = _check_inputs(queries, points, k)
    n = p64.shape[0]
    out = np.empty((q64.shape[0], k), dtype=np.int64)
    for lo in range(0, q64.shape[0], _BRUTE_CHUNK):
        chunk = q64[lo : lo + _BRUTE_CHUNK]
        d2 = _pair_d2(
            chunk[:, 0:1], chunk[:, 1:2], chunk[:, 2:3], p64[:, 0], p64[:, 1], p64[:, 2]
        )
        if n <= _FULL_SORT_MAX_POINTS or k == n:
            # Stable sort keeps ascending index among equal distances.
            out[lo : lo + chunk.shape[0]] = np.argsort(d2, axis=1, kind="stable")[:, :k]
            continue
        sel = np.argpartition(d2, k - 1, axis=1)[:, :k]
        sel_d2 = np.take_along_axis(d2, sel, axis=1)
        kth = sel_d2.max(axis=1)
        # A tie at the cut means the partition may have kept the wrong index.
        ambiguous = (d2 <= kth[:, None]).sum(axis=1) > k
        order = np.argsort(sel_d2 + sel * 1j, axis=1)  # (distance, index) pairs
        ranked = np.take_along_axis(sel, order, axis=1)
        for row in np.flatnonzero(ambiguous):
            pool = np.flatnonzero(d2[row] <= kth[row])
            ranked[row] = pool[np.argsort(d2[row][pool], kind="stable")][:k]
        out[lo : lo + chunk.shape[0]] = ranked
    return out


# ---------------------------------------------------------------------------
# Uniform-grid accelerated engine
# ---------------------------------------------------------------------------


def _build_cell_index(p64: np.ndarray):
    n = p64.shape[0]
    mins = p64.min(axis=0)
    maxs = p64.max(axis=0)
    h = float((maxs - mins).max()) / max(n ** (1.0 / 3.0), 1.0)
    if h <= 0.0:
        h = 1.0
    dims = np.floor((maxs - mins) / h).astype(np.int64) + 1
    cell = np.floor((p64 - mins) / h).astype(np.int64)
    flat = (cell[:, 0] * dims[1] + cell[:, 1]) * dims[2] + cell[:, 2]
    order = np.argsort(flat, kind="stable").astype(np.int64)
    counts = np.bincount(flat, minlength=int(dims.prod()))
    starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return mins, h, dims, order, starts


def knn_grid(queries, points, k: int) -> np.ndarray:
    """Same contract and same result as :func:`knn_bruteforce`, via a spatial hash.

    Cells are cubes of edge ``max_span / N^(1/3)`` (about one point per cell
    for uniform data). Each query scans the cell box of growing Chebyshev
    radius r and stops once the k-th candidate is strictly closer than r*h,
    the minimum possible distance to any unscanned cell, or once the box
    covers the whole grid.
    """
    q64, p64 = _check_inputs(queries, points, k)
    mins, h, dims, order, starts = _build_cell_index(p64)

    qcell = np.floor((q64 - mins) / h).astype(np.int64)  # unclamped on purpose
    cover_r = np.maximum(qcell, dims - 1 - qcell).max(axis=1)

    n_q = q64.shape[0]
    result = np.full((n_q, k), -1, dtype=np.int64)
    active = np.arange(n_q)
    r = max(1, int(np.ceil(k ** (1.0 / 3.0) / 2.0)))
    while active.size:
        side = np.arange(-r, r + 1)
        offs = np.stack(np.meshgrid(side, side, side, indexing="ij"), axis=-1).reshape(-1, 3)
        tgt = qcell[active][:, None, :] + offs[None, :, :]
        valid = np.all((tgt >= 0) & (tgt < dims), axis=2)
        tflat = (tgt[..., 0] * dims[1] + tgt[..., 1]) * dims[2] + tgt[..., 2]
        qseg = np.broadcast_to(np.arange(active.size)[:, None], valid.shape)[valid]
        tflat = tflat[valid]
        seg_start = starts[tflat]
        seg_cnt = starts[tflat + 1] - seg_start
        total = int(seg_cnt.sum())
        if total:
            ends = np.cumsum(seg_cnt)
            pos = np.arange(total) - np.repeat(ends - seg_cnt, seg_cnt) + np.repeat(
                seg_start, seg_cnt
            )
            cand = order[pos]
            qid = np.repeat(qseg, seg_cnt)
            qpos = q64[active][qid]
            cpos = p64[cand]
            d2 = _pair_d2(qpos[:, 0], qpos[:, 1], qpos[:, 2], cpos[:, 0], cpos[:, 1], cpos[:, 2])
            by = np.lexsort((cand, d2, qid))
            d2s = d2[by]
            cands = cand[by]
            cnt_q = np.bincount(qid, minlength=active.size)
            gstart = np.cumsum(cnt_q) - cnt_q
            enough = cnt_q >= k
            kth = np.where(
                enough, d2s[np.minimum(gstart + k - 1, total - 1)], np.inf
            )
            covered = r >= cover_r[active]
            accept = enough & ((kth < (r * h) ** 2) | covered)
            if accept.any():
                rows = np.flatnonzero(accept)
                take = gstart[rows][:, None] + np.arange(k)[None, :]
                result[active[rows]] = cands[take]
                active = active[~accept]
        r += 1
    return result


# ---------------------------------------------------------------------------
# Dilated selection
# ---------------------------------------------------------------------------


def knn_dilated(queries, points, k: int, dilation: int = 1, method: str = "auto") -> np.ndarray:
    """Every ``dilation``-th of the sorted nearest neighbors: ranks 0, n, 2n, ...

    When the cloud cannot supply rank (k-1)*dilation, the step shrinks to
    ``max(1, N // k)``; ranks beyond the last point repeat the farthest one.
    """
    points = np.asarray(points)
    if k < 1:
        raise ConfigError(f"k must be positive, got {k}")
    if dilation < 1:
        raise ConfigError(f"dilation must be positive, got {dilation}")
    n = points.shape[0] if points.ndim == 2 else 0
    if n == 0:
        raise DomainError("cannot search an empty point set")
    step = dilation if n >= k * dilation else max(1, n // k)
    needed = min((k - 1) * step + 1, n)
    ranks = np.minimum(np.arange(k) * step, n - 1)
    if method == "auto":
        method = "grid" if n >= 2048 else "brute"
    if method == "grid":
        ranked = knn_grid(queries, points, needed)
    elif method == "brute":
        ranked = knn_bruteforce(queries, points, needed)
    else:
        raise ConfigError(f"unknown neighbor search method {method!r}")
    return ranked[:, ranks]


def neighbor_indices(positions, config: NeighborConfig, method: str = "auto") -> np.ndarray:
    """Dilated self-neighborhoods of a cloud (each point's rank-0 hit is itself)."""
    return knn_dilated(positions, positions, config.k, config.dilation, method=method)
