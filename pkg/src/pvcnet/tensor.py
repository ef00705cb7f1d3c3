"""Minimal dense-tensor engine with taped reverse-mode differentiation.

Tensors wrap row-major numpy arrays in one of two precisions: float32 for
training and benchmarking, float64 for gradient verification. Operations
record their backward rule onto the active ``GradTape``; ``GradTape.backward``
replays the records in exact reverse recording order. With no tape active,
operations run forward-only (used by evaluation and benchmarking).

Sparsity is always expressed through index lists (``gather_rows`` /
``scatter_add_rows``); there is no sparse tensor type.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DomainError

DEFAULT_DTYPE = np.float32

_uid_counter = itertools.count()


class Tensor:
    """Dense row-major array with an optional same-shape gradient accumulator."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # Leaf parameters carry an eagerly allocated accumulator; tape
        # intermediates allocate lazily on first contribution.
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._uid = next(_uid_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; scalars and arrays are promoted to constant tensors.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Record:
    """One taped operation: name, operand references, and its backward rule."""

    name: str
    inputs: tuple[Tensor, ...]
    outputs: tuple[Tensor, ...]
    backward: object  # zero-arg callable


class GradTape:
    """Ordered log of differentiable operations.

    The tape is single-writer: enter it as a context manager, run the forward
    pass, then call :meth:`backward` on the result. Records are replayed in
    exact reverse recording order, which is a valid topological order because
    every operation's inputs exist before its outputs.
    """

    def __init__(self):
        self._records: list[_Record] = []

    @property
    def records(self) -> tuple[_Record, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def backward(self, root: Tensor, seed: np.ndarray | None = None) -> None:
        """Seed ``root``'s gradient (ones by default) and replay in reverse."""
        if seed is None:
            seed = np.ones_like(root.data)
        else:
            seed = np.asarray(seed, dtype=root.data.dtype)
            if seed.shape != root.data.shape:
                raise DimensionError(
                    f"seed shape {seed.shape} does not match root shape {root.data.shape}"
                )
        _accumulate(root, seed)
        for rec in reversed(self._records):
            rec.backward()


_TAPE_STACK: list[GradTape | None] = []


@contextmanager
def no_grad():
    """Disable recording within the block even if an outer tape is active."""
    _TAPE_STACK.append(None)
    try:
        yield
    finally:
        _TAPE_STACK.pop()


def _active_tape() -> GradTape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(name: str, inputs: tuple[Tensor, ...], outputs: tuple[Tensor, ...], backward) -> None:
    tape = _active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return
    for out in outputs:
        out.requires_grad = True
    tape._records.append(_Record(name, inputs, outputs, backward))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    np.add(t.grad, g, out=t.grad, casting="same_kind")


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# ---------------------------------------------------------------------------
# Elementwise operations
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    b = _coerce(b, a.dtype)
    _broadcast_shape(a, b, "add")
    out = Tensor(a.data + b.data)

    def backward():
        g = out.grad
        if g is None:
            return
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    _record("add", (a, b), (out,), backward)
    return out


def sub(a, b) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    b = _coerce(b, a.dtype)
    _broadcast_shape(a, b, "sub")
    out = Tensor(a.data - b.data)

    def backward():
        g = out.grad
        if g is None:
            return
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    _record("sub", (a, b), (out,), backward)
    return out


def mul(a, b) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    b = _coerce(b, a.dtype)
    _broadcast_shape(a, b, "mul")
    out = Tensor(a.data * b.data)

    def backward():
        g = out.grad
        if g is None:
            return
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    _record("mul", (a, b), (out,), backward)
    return out


def relu(a) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    out = Tensor(np.maximum(a.data, 0))

    def backward():
        g = out.grad
        if g is None:
            return
        # Subgradient at exactly 0 is 0.
        _accumulate(a, g * (a.data > 0))

    _record("relu", (a,), (out,), backward)
    return out


def exp(a) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    with np.errstate(over="ignore"):
        value = np.exp(a.data)
    if not np.all(np.isfinite(value)):
        raise DomainError("exp overflowed to non-finite values")
    out = Tensor(value)

    def backward():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g * value)

    _record("exp", (a,), (out,), backward)
    return out


def log(a) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    out = Tensor(np.log(a.data))

    def backward():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g / a.data)

    _record("log", (a,), (out,), backward)
    return out


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}
_ELEMENTWISE_UNARY = {"relu": relu, "exp": exp, "log": log}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name (``add/sub/mul`` binary, ``relu/exp/log`` unary)."""
    if kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise DimensionError(f"{kind} is binary, second operand missing")
        return _ELEMENTWISE_BINARY[kind](a, b)
    if kind in _ELEMENTWISE_UNARY:
        if b is not None:
            raise DimensionError(f"{kind} is unary, got a second operand")
        return _ELEMENTWISE_UNARY[kind](a)
    raise ConfigError(f"unknown elementwise op kind {kind!r}")


# ---------------------------------------------------------------------------
# Matrix product and pairwise softmax
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    b = _coerce(b, a.dtype)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    _record("matmul", (a, b), (out,), backward)
    return out


def softmax_pairwise(a, b) -> tuple[Tensor, Tensor]:
    """Elementwise ``(e^a, e^b) / (e^a + e^b)``, stabilized by max subtraction.

    The two outputs sum to 1 elementwise for all finite inputs.
    """
    a = _coerce(a, DEFAULT_DTYPE)
    b = _coerce(b, a.dtype)
    if a.shape != b.shape:
        raise DimensionError(f"softmax_pairwise needs equal shapes, got {a.shape} and {b.shape}")
    m = np.maximum(a.data, b.data)
    ea = np.exp(a.data - m)
    eb = np.exp(b.data - m)
    denom = ea + eb
    pa_val = ea / denom
    pb_val = eb / denom
    pa = Tensor(pa_val)
    pb = Tensor(pb_val)

    def backward():
        ga = pa.grad
        gb = pb.grad
        if ga is None and gb is None:
            return
        if ga is None:
            ga = 0.0
        if gb is None:
            gb = 0.0
        # d pa/da = pa*pb, d pa/db = -pa*pb (and symmetrically for pb).
        common = (ga - gb) * pa_val * pb_val
        _accumulate(a, common)
        _accumulate(b, -common)

    _record("softmax_pairwise", (a, b), (pa, pb), backward)
    return pa, pb


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def _check_axis(a: Tensor, axis: int, op: str) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for rank {a.ndim}")
    axis = axis % a.ndim
    if a.shape[axis] == 0:
        raise DomainError(f"{op}: reduction over empty axis {axis}")
    return axis


def reduce_sum(a, axis: int) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    axis = _check_axis(a, axis, "reduce_sum")
    out = Tensor(a.data.sum(axis=axis))

    def backward():
        g = out.grad
        if g is None:
            return
        _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    _record("reduce_sum", (a,), (out,), backward)
    return out


def reduce_mean(a, axis: int) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    axis = _check_axis(a, axis, "reduce_mean")
    n = a.shape[axis]
    out = Tensor(a.data.mean(axis=axis))

    def backward():
        g = out.grad
        if g is None:
            return
        _accumulate(a, np.broadcast_to(np.expand_dims(g / n, axis), a.shape))

    _record("reduce_mean", (a,), (out,), backward)
    return out


def reduce_max(a, axis: int) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    axis = _check_axis(a, axis, "reduce_max")
    # np.argmax picks the first maximum, which realizes the lowest-index
    # tie-break the gradient routing contract requires.
    arg = np.argmax(a.data, axis=axis)
    out = Tensor(np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis))

    def backward():
        g = out.grad
        if g is None:
            return
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        _accumulate(a, ga)

    _record("reduce_max", (a,), (out,), backward)
    return out


_REDUCE = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}


def reduce(kind: str, a, axis: int) -> Tensor:
    """Dispatch a reduction by name (``sum``, ``mean`` or ``max``)."""
    if kind not in _REDUCE:
        raise ConfigError(f"unknown reduce op kind {kind!r}")
    return _REDUCE[kind](a, axis)


# ---------------------------------------------------------------------------
# Row indexing (the mechanism behind voxel scatter/gather)
# ---------------------------------------------------------------------------


def _check_rows(idx, n: int, op: str) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError(f"{op}: index list must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)][0]
        raise IndexError(f"{op}: index {bad} out of range [0, {n})")
    return idx


def _segment_add_rows(acc: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> None:
    """acc[idx[i]] += rows[i], accumulated in sorted-segment order.

    Deterministic: rows with equal target are summed in ascending source
    position via a stable sort + reduceat, never np.add.at.
    """
    if idx.size == 0:
        return
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    srows = rows[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    sums = np.add.reduceat(srows, starts, axis=0)
    np.add(acc[sidx[starts]], sums, out=sums, casting="same_kind")
    acc[sidx[starts]] = sums


def gather_rows(a, idx) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    if a.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-D source, got {a.shape}")
    idx = _check_rows(idx, a.shape[0], "gather_rows")
    out = Tensor(a.data[idx])

    def backward():
        g = out.grad
        if g is None:
            return
        ga = np.zeros_like(a.data)
        _segment_add_rows(ga, idx, g)
        _accumulate(a, ga)

    _record("gather_rows", (a,), (out,), backward)
    return out


def scatter_add_rows(target, idx, src) -> Tensor:
    target = _coerce(target, DEFAULT_DTYPE)
    src = _coerce(src, target.dtype)
    if target.ndim != 2 or src.ndim != 2:
        raise DimensionError(
            f"scatter_add_rows needs 2-D target and source, got {target.shape} and {src.shape}"
        )
    if target.shape[1] != src.shape[1]:
        raise DimensionError(
            f"scatter_add_rows column mismatch: target {target.shape}, source {src.shape}"
        )
    idx = _check_rows(idx, target.shape[0], "scatter_add_rows")
    if idx.shape[0] != src.shape[0]:
        raise DimensionError(
            f"scatter_add_rows needs one index per source row, got {idx.shape[0]} for {src.shape[0]}"
        )
    value = target.data.copy()
    _segment_add_rows(value, idx, src.data)
    out = Tensor(value)

    def backward():
        g = out.grad
        if g is None:
            return
        _accumulate(target, g)
        _accumulate(src, g[idx])

    _record("scatter_add_rows", (target, src), (out,), backward)
    return out


# ---------------------------------------------------------------------------
# Shape plumbing
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    try:
        value = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from exc
    out = Tensor(value)

    def backward():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g.reshape(a.shape))

    _record("reshape", (a,), (out,), backward)
    return out


def transpose(a) -> Tensor:
    a = _coerce(a, DEFAULT_DTYPE)
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {a.shape}")
    out = Tensor(np.ascontiguousarray(a.data.T))

    def backward():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g.T)

    _record("transpose", (a,), (out,), backward)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t, DEFAULT_DTYPE) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty tensor list")
    ndim = tensors[0].ndim
    if not -ndim <= axis < ndim:
        raise DimensionError(f"concat: axis {axis} out of range for rank {ndim}")
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim:
            raise DimensionError("concat: operand ranks differ")
        for d in range(ndim):
            if d != axis and t.shape[d] != tensors[0].shape[d]:
                raise DimensionError(
                    f"concat: shapes {tensors[0].shape} and {t.shape} differ off-axis"
                )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward():
        g = out.grad
        if g is None:
            return
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    _record("concat", tuple(tensors), (out,), backward)
    return out


def log_softmax(a) -> Tensor:
    """Log-softmax over the last axis (smooth; safe for gradient checking)."""
    a = _coerce(a, DEFAULT_DTYPE)
    m = a.data.max(axis=-1, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    out = Tensor(logp)

    def backward():
        g = out.grad
        if g is None:
            return
        p = np.exp(logp)
        _accumulate(a, g - p * g.sum(axis=-1, keepdims=True))

    _record("log_softmax", (a,), (out,), backward)
    return out


def softmax(a) -> Tensor:
    """Softmax over the last axis; rows sum to 1."""
    return exp(log_softmax(a))


# ---------------------------------------------------------------------------
# Volumetric convolution
# ---------------------------------------------------------------------------


def conv3d(volume, kernels, bias) -> Tensor:
    """Same-size 3-D cross-correlation of ``volume`` (C_in,X,Y,Z) with
    ``kernels`` (C_out,C_in,k,k,k) plus per-channel ``bias`` (C_out,).

    Zero padding of (k-1)/2 on each face, stride 1. Implemented by gathering
    the k^3 shifted windows into one (C_in*k^3, cells) matrix and running a
    single GEMM; the accumulation order is fixed, so results are
    bit-identical across runs.
    """
    volume = _coerce(volume, DEFAULT_DTYPE)
    kernels = _coerce(kernels, volume.dtype)
    bias = _coerce(bias, volume.dtype)
    if volume.ndim != 4:
        raise DimensionError(f"conv3d volume must be rank 4 (C,X,Y,Z), got {volume.shape}")
    if kernels.ndim != 5:
        raise DimensionError(f"conv3d kernels must be rank 5, got {kernels.shape}")
    c_out, c_in, k1, k2, k3 = kernels.shape
    if not k1 == k2 == k3:
        raise ConfigError(f"conv3d kernels must be cubic, got {kernels.shape}")
    k = k1
    if k % 2 == 0:
        raise ConfigError(f"conv3d kernel size must be odd, got {k}")
    if c_in != volume.shape[0]:
        raise DimensionError(
            f"conv3d channel mismatch: volume {volume.shape[0]}, kernels expect {c_in}"
        )
    if bias.shape != (c_out,):
        raise DimensionError(f"conv3d bias must have shape ({c_out},), got {bias.shape}")

    pad = k // 2
    spatial = volume.shape[1:]
    cells = int(np.prod(spatial))
    offsets = list(np.ndindex(k, k, k))
    padded = np.pad(volume.data, ((0, 0),) + ((pad, pad),) * 3)
    kmat = kernels.data.reshape(c_out, c_in * k * k * k)

    col = np.empty((c_in, k * k * k, cells), dtype=volume.dtype)
    for off, (dx, dy, dz) in enumerate(offsets):
        window = padded[:, dx : dx + spatial[0], dy : dy + spatial[1], dz : dz + spatial[2]]
        col[:, off, :] = window.reshape(c_in, cells)
    colmat = col.reshape(c_in * k * k * k, cells)

    out_mat = kmat @ colmat
    out_mat += bias.data[:, None]
    out = Tensor(out_mat.reshape((c_out,) + spatial))

    def backward():
        g = out.grad
        if g is None:
            return
        gmat = g.reshape(c_out, cells)
        _accumulate(bias, gmat.sum(axis=1))
        _accumulate(kernels, (gmat @ colmat.T).reshape(kernels.shape))
        if volume.requires_grad:
            gcol = (kmat.T @ gmat).reshape(c_in, k * k * k, cells)
            gpad = np.zeros_like(padded)
            for off, (dx, dy, dz) in enumerate(offsets):
                gpad[
                    :, dx : dx + spatial[0], dy : dy + spatial[1], dz : dz + spatial[2]
                ] += gcol[:, off, :].reshape((c_in,) + spatial)
            _accumulate(
                volume,
                gpad[:, pad : pad + spatial[0], pad : pad + spatial[1], pad : pad + spatial[2]],
            )

    _record("conv3d", (volume, kernels, bias), (out,), backward)
    return out


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradcheckFailure:
    input_index: int
    coord: int
    analytic: float
    numeric: float
    rel_err: float
    reason: str = "mismatch"


@dataclass
class GradcheckReport:
    """Outcome of comparing reverse-mode gradients against central differences."""

    tol: float
    step: float
    n_checked: int = 0
    n_excluded: int = 0
    max_rel_err: float = 0.0
    worst: GradcheckFailure | None = None
    failures: list[GradcheckFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_rel_err <= self.tol

    def summary(self) -> str:
        state = "pass" if self.passed else "FAIL"
        loc = ""
        if self.worst is not None:
            loc = f" (input {self.worst.input_index}, coord {self.worst.coord})"
        return (
            f"{state}: max rel err {self.max_rel_err:.3e}{loc}, "
            f"{self.n_checked} coords checked, {self.n_excluded} kink-excluded"
        )


def _rel_err(x: float, y: float) -> float:
    return abs(x - y) / max(abs(x), abs(y), 1.0)


def gradcheck(f, inputs, h: float = 1e-5, tol: float = 1e-5, seed: int = 0) -> GradcheckReport:
    """Compare the taped gradient of ``f(*inputs)`` to central differences.

    ``inputs`` must be float64 tensors (32-bit finite differences are too
    noisy to verify against). Non-scalar outputs are reduced through a fixed
    random projection so a single scalar is differentiated.

    Per coordinate: the analytic gradient is accepted if it matches the
    central difference at step ``h`` or ``h/2``, or their Richardson
    extrapolation. When both steps disagree with the analytic value *and*
    with each other, the finite difference is unreliable because a relu/max
    kink lies inside the probed interval; the coordinate is counted as
    kink-excluded. Consistent numeric estimates that contradict the analytic
    gradient are reported as failures.
    """
    inputs = list(inputs)
    for i, t in enumerate(inputs):
        if not isinstance(t, Tensor):
            raise TypeError(f"input {i} is not a Tensor")
        if t.data.dtype != np.float64:
            raise DomainError(f"gradcheck requires float64 inputs, input {i} is {t.data.dtype}")
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)

    rng = np.random.default_rng(seed)
    report = GradcheckReport(tol=tol, step=h)

    with GradTape() as tape:
        out = f(*inputs)
        if not isinstance(out, Tensor):
            raise TypeError("checked function must return a Tensor")
        w = rng.standard_normal(out.shape) if out.shape else np.ones(())
        loss = reduce_sum(reshape(mul(out, Tensor(w, dtype=np.float64)), (-1,)), 0)
    tape.backward(loss)
    analytic = [t.grad.copy() for t in inputs]

    def scalar_eval() -> float:
        with no_grad():
            value = f(*inputs).data
        if not np.all(np.isfinite(value)):
            raise DomainError("non-finite forward value during gradient check")
        return float(np.sum(value * w))

    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            a = float(analytic[i].reshape(-1)[j])

            def central(step: float) -> float:
                flat[j] = orig + step
                fp = scalar_eval()
                flat[j] = orig - step
                fm = scalar_eval()
                flat[j] = orig
                return (fp - fm) / (2 * step)

            try:
                d1 = central(h)
            except DomainError:
                flat[j] = orig
                report.failures.append(GradcheckFailure(i, j, a, float("nan"), float("inf"), "non-finite"))
                continue
            report.n_checked += 1
            err1 = _rel_err(a, d1)
            if not np.isfinite(d1) or not np.isfinite(a):
                report.failures.append(GradcheckFailure(i, j, a, d1, float("inf"), "non-finite"))
                continue
            if err1 <= tol:
                if err1 > report.max_rel_err:
                    report.max_rel_err = err1
                    report.worst = GradcheckFailure(i, j, a, d1, err1)
                continue
            # Retry at h/2 and with Richardson extrapolation before judging.
            d2 = central(h / 2)
            err2 = _rel_err(a, d2)
            d_extrap = (4 * d2 - d1) / 3
            err3 = _rel_err(a, d_extrap)
            best = min(err1, err2, err3)
            if best <= tol:
                if best > report.max_rel_err:
                    report.max_rel_err = best
                    report.worst = GradcheckFailure(i, j, a, d2, best)
                continue
            if _rel_err(d1, d2) > tol:
                # The two step sizes disagree with each other: a kink sits
                # inside the probed interval and the estimate is meaningless.
                report.n_checked -= 1
                report.n_excluded += 1
                continue
            failure = GradcheckFailure(i, j, a, d2, best)
            report.failures.append(failure)
            if report.worst is None or best > report.max_rel_err:
                report.max_rel_err = best
                report.worst = failure

    return report
