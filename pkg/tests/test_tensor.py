"""Tests for the taped tensor engine.

Oracles come first: an independent central-difference gradient, a direct
six-loop convolution reference, and the adjoint dot-product identity. The
engine is verified against those, never against itself.
"""

import numpy as np
import pytest

import pvcnet.tensor as T
from pvcnet.errors import ConfigError, DimensionError, DomainError
from pvcnet.tensor import GradTape, Tensor

# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar f() w.r.t. x, perturbed in place."""
    g = np.zeros_like(x)
    xf = x.reshape(-1)
    gf = g.reshape(-1)
    for j in range(xf.size):
        orig = xf[j]
        xf[j] = orig + h
        fp = f()
        xf[j] = orig - h
        fm = f()
        xf[j] = orig
        gf[j] = (fp - fm) / (2 * h)
    return g


def conv3d_direct(vol: np.ndarray, ker: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Reference same-size cross-correlation by explicit summation."""
    c_out, c_in, k = ker.shape[0], ker.shape[1], ker.shape[2]
    X, Y, Z = vol.shape[1], vol.shape[2], vol.shape[3]
    pad = k // 2
    out = np.zeros((c_out, X, Y, Z), dtype=vol.dtype)
    for o in range(c_out):
        for x in range(X):
            for y in range(Y):
                for z in range(Z):
                    acc = bias[o]
                    for i in range(c_in):
                        for dx in range(k):
                            for dy in range(k):
                                for dz in range(k):
                                    sx = x + dx - pad
                                    sy = y + dy - pad
                                    sz = z + dz - pad
                                    inside = 0 <= sx < X and 0 <= sy < Y and 0 <= sz < Z
                                    if inside:
                                        acc += vol[i, sx, sy, sz] * ker[o, i, dx, dy, dz]
                    out[o, x, y, z] = acc
    return out


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["add", "sub", "mul"])
@pytest.mark.parametrize(
    "shape_a,shape_b",
    [((3, 4), (3, 4)), ((3, 4), (4,)), ((3, 1), (1, 5)), ((2, 3, 4), (3, 4)), ((4,), ())],
)
def test_binary_elementwise_matches_numeric(kind, shape_a, shape_b):
    rng = np.random.default_rng(0)
    xa = rng.normal(size=shape_a)
    xb = rng.normal(size=shape_b)
    w = rng.normal(size=np.broadcast_shapes(shape_a, shape_b))
    ref_op = {"add": np.add, "sub": np.subtract, "mul": np.multiply}[kind]

    ta = Tensor(xa, requires_grad=True)
    tb = Tensor(xb, requires_grad=True)
    with GradTape() as tape:
        out = T.elementwise(kind, ta, tb)
    tape.backward(out, seed=w)

    np.testing.assert_allclose(out.data, ref_op(xa, xb), rtol=1e-12)
    ga = numeric_grad(lambda: float(np.sum(ref_op(xa, xb) * w)), xa)
    gb = numeric_grad(lambda: float(np.sum(ref_op(xa, xb) * w)), xb)
    np.testing.assert_allclose(ta.grad, ga, rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(tb.grad, gb, rtol=1e-5, atol=1e-7)


def test_broadcast_mismatch_is_dimension_error():
    with pytest.raises(DimensionError):
        T.add(Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 4))))


def test_relu_zero_subgradient():
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    with GradTape() as tape:
        y = T.relu(x)
    tape.backward(y)
    np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_exp_log_grads_match_numeric():
    rng = np.random.default_rng(1)
    x = rng.uniform(0.5, 2.0, size=(4, 3))
    w = rng.normal(size=(4, 3))
    t = Tensor(x, requires_grad=True)
    with GradTape() as tape:
        out = T.log(T.exp(t) * Tensor(np.full((4, 3), 2.0)))
    tape.backward(out, seed=w)
    g = numeric_grad(lambda: float(np.sum(np.log(2.0 * np.exp(x)) * w)), x)
    np.testing.assert_allclose(t.grad, g, rtol=1e-5, atol=1e-7)


def test_log_rejects_nonpositive():
    with pytest.raises(DomainError):
        T.log(Tensor([0.0, 1.0]))
    with pytest.raises(DomainError):
        T.log(Tensor([-0.5]))


def test_exp_rejects_overflow():
    with pytest.raises(DomainError):
        T.exp(Tensor(np.array([1000.0], dtype=np.float32)))


def test_elementwise_dispatch_errors():
    t = Tensor(np.ones(2))
    with pytest.raises(ConfigError):
        T.elementwise("pow", t, t)
    with pytest.raises(DimensionError):
        T.elementwise("add", t)
    with pytest.raises(DimensionError):
        T.elementwise("relu", t, t)


# ---------------------------------------------------------------------------
# Matrix product and pairwise softmax
# ---------------------------------------------------------------------------


def test_matmul_matches_numpy_and_adjoints():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 5))
    w = rng.normal(size=(4, 5))
    ta = Tensor(a, requires_grad=True)
    tb = Tensor(b, requires_grad=True)
    with GradTape() as tape:
        out = ta @ tb
    tape.backward(out, seed=w)
    np.testing.assert_allclose(out.data, a @ b, rtol=1e-12)
    np.testing.assert_allclose(ta.grad, w @ b.T, rtol=1e-12)
    np.testing.assert_allclose(tb.grad, a.T @ w, rtol=1e-12)


def test_matmul_shape_errors():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_softmax_pairwise_outputs_sum_to_one():
    rng = np.random.default_rng(3)
    a = rng.uniform(-80.0, 80.0, size=(64,))
    b = rng.uniform(-80.0, 80.0, size=(64,))
    a[0], b[0] = 800.0, -800.0  # extreme gap must not overflow
    pa, pb = T.softmax_pairwise(Tensor(a), Tensor(b))
    np.testing.assert_allclose(pa.data + pb.data, 1.0, rtol=0, atol=1e-12)
    assert np.all(pa.data >= 0) and np.all(pb.data >= 0)
    assert pa.data[0] == pytest.approx(1.0)


def test_softmax_pairwise_grads_match_numeric():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(5, 2))
    b = rng.normal(size=(5, 2))
    w1 = rng.normal(size=(5, 2))
    w2 = rng.normal(size=(5, 2))
    ta = Tensor(a, requires_grad=True)
    tb = Tensor(b, requires_grad=True)

    def fwd() -> float:
        m = np.maximum(a, b)
        ea, eb = np.exp(a - m), np.exp(b - m)
        return float(np.sum(ea / (ea + eb) * w1) + np.sum(eb / (ea + eb) * w2))

    with GradTape() as tape:
        pa, pb = T.softmax_pairwise(ta, tb)
        loss = T.reduce_sum(T.reshape(pa * Tensor(w1) + pb * Tensor(w2), (-1,)), 0)
    tape.backward(loss)
    np.testing.assert_allclose(ta.grad, numeric_grad(fwd, a), rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(tb.grad, numeric_grad(fwd, b), rtol=1e-5, atol=1e-8)


def test_softmax_pairwise_shape_mismatch():
    with pytest.raises(DimensionError):
        T.softmax_pairwise(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kind,axis", [("sum", 0), ("sum", 1), ("mean", 0), ("mean", -1), ("max", 0), ("max", 1)]
)
def test_reduce_matches_numpy_and_numeric(kind, axis):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 6))
    ref = {"sum": np.sum, "mean": np.mean, "max": np.max}[kind]
    t = Tensor(x, requires_grad=True)
    with GradTape() as tape:
        out = T.reduce(kind, t, axis)
    w = rng.normal(size=out.shape)
    tape.backward(out, seed=w)
    np.testing.assert_allclose(out.data, ref(x, axis=axis), rtol=1e-12)
    g = numeric_grad(lambda: float(np.sum(ref(x, axis=axis) * w)), x)
    np.testing.assert_allclose(t.grad, g, rtol=1e-5, atol=1e-8)


def test_reduce_drops_axis():
    t = Tensor(np.zeros((4, 6, 2)))
    assert T.reduce_sum(t, 1).shape == (4, 2)
    assert T.reduce_max(t, 2).shape == (4, 6)
    assert T.reduce_mean(t, 0).shape == (6, 2)


def test_reduce_max_routes_ties_to_lowest_index():
    x = Tensor(np.array([[1.0, 3.0, 3.0, 0.0]]), requires_grad=True)
    with GradTape() as tape:
        out = T.reduce_max(x, 1)
    tape.backward(out)
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0, 0.0]])


@pytest.mark.parametrize("kind", ["sum", "mean", "max"])
def test_reduce_empty_axis_is_domain_error(kind):
    with pytest.raises(DomainError):
        T.reduce(kind, Tensor(np.zeros((0, 3))), 0)


def test_reduce_axis_out_of_range():
    with pytest.raises(DimensionError):
        T.reduce_sum(Tensor(np.zeros((2, 2))), 2)


# ---------------------------------------------------------------------------
# Row gather / scatter
# ---------------------------------------------------------------------------


def test_gather_rows_forward_and_grad():
    rng = np.random.default_rng(6)
    x = np.arange(12.0).reshape(4, 3)
    idx = np.array([2, 0, 2, 3, 0])
    w = rng.normal(size=(5, 3))
    t = Tensor(x, requires_grad=True)
    with GradTape() as tape:
        out = T.gather_rows(t, idx)
    tape.backward(out, seed=w)
    expected = np.zeros_like(x)
    np.add.at(expected, idx, w)
    np.testing.assert_array_equal(out.data, x[idx])
    np.testing.assert_allclose(t.grad, expected, rtol=1e-12)


def test_scatter_add_rows_forward_and_grad():
    rng = np.random.default_rng(7)
    target = rng.normal(size=(5, 2))
    src = rng.normal(size=(7, 2))
    idx = np.array([0, 4, 4, 1, 0, 0, 3])
    w = rng.normal(size=(5, 2))
    tt = Tensor(target, requires_grad=True)
    ts = Tensor(src, requires_grad=True)
    with GradTape() as tape:
        out = T.scatter_add_rows(tt, idx, ts)
    tape.backward(out, seed=w)
    expected = target.copy()
    np.add.at(expected, idx, src)
    np.testing.assert_allclose(out.data, expected, rtol=1e-12)
    np.testing.assert_allclose(tt.grad, w, rtol=1e-12)
    np.testing.assert_allclose(ts.grad, w[idx], rtol=1e-12)


def test_gather_and_scatter_are_mutual_adjoints():
    # <A[idx], S> must equal <A, scatter(0, idx, S)> for any A, S, idx.
    rng = np.random.default_rng(8)
    a = rng.normal(size=(6, 3))
    s = rng.normal(size=(9, 3))
    idx = rng.integers(0, 6, size=9)
    scattered = T.scatter_add_rows(Tensor(np.zeros((6, 3))), idx, Tensor(s))
    lhs = float(np.sum(a[idx] * s))
    rhs = float(np.sum(a * scattered.data))
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_scatter_add_is_bit_deterministic():
    rng = np.random.default_rng(9)
    src = rng.normal(size=(4096, 8)).astype(np.float32)
    idx = rng.integers(0, 16, size=4096)
    runs = [
        T.scatter_add_rows(Tensor(np.zeros((16, 8), np.float32)), idx, Tensor(src)).data
        for _ in range(3)
    ]
    assert runs[0].tobytes() == runs[1].tobytes() == runs[2].tobytes()
    ref = np.zeros((16, 8))
    np.add.at(ref, idx, src.astype(np.float64))
    np.testing.assert_allclose(runs[0], ref, rtol=1e-4, atol=1e-4)


def test_row_index_out_of_range():
    with pytest.raises(IndexError):
        T.gather_rows(Tensor(np.zeros((3, 2))), np.array([3]))
    with pytest.raises(IndexError):
        T.scatter_add_rows(Tensor(np.zeros((3, 2))), np.array([-1]), Tensor(np.zeros((1, 2))))


def test_scatter_shape_errors():
    with pytest.raises(DimensionError):
        T.scatter_add_rows(Tensor(np.zeros((3, 2))), np.array([0]), Tensor(np.zeros((1, 3))))
    with pytest.raises(DimensionError):
        T.scatter_add_rows(Tensor(np.zeros((3, 2))), np.array([0, 1]), Tensor(np.zeros((1, 2))))


# ---------------------------------------------------------------------------
# Shape plumbing
# ---------------------------------------------------------------------------


def test_concat_backward_splits_gradient():
    rng = np.random.default_rng(10)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(4, 3))
    w = rng.normal(size=(6, 3))
    ta = Tensor(a, requires_grad=True)
    tb = Tensor(b, requires_grad=True)
    with GradTape() as tape:
        out = T.concat([ta, tb], axis=0)
    tape.backward(out, seed=w)
    np.testing.assert_array_equal(out.data, np.concatenate([a, b]))
    np.testing.assert_array_equal(ta.grad, w[:2])
    np.testing.assert_array_equal(tb.grad, w[2:])


def test_concat_off_axis_mismatch():
    with pytest.raises(DimensionError):
        T.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4)))], axis=0)


def test_reshape_and_transpose_round_trip_gradient():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 3))
    t = Tensor(x, requires_grad=True)
    with GradTape() as tape:
        out = T.transpose(T.reshape(t, (3, 4)))
    tape.backward(out, seed=w)
    np.testing.assert_array_equal(out.data, x.T)
    np.testing.assert_array_equal(t.grad, w.T)


def test_log_softmax_rows_normalize():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(5, 7)) * 10
    out = T.log_softmax(Tensor(x))
    np.testing.assert_allclose(np.exp(out.data).sum(axis=1), 1.0, atol=1e-12)


def test_log_softmax_grad_matches_numeric():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(4, 5))
    w = rng.normal(size=(4, 5))
    t = Tensor(x, requires_grad=True)
    with GradTape() as tape:
        out = T.log_softmax(t)
    tape.backward(out, seed=w)

    def fwd() -> float:
        s = x - x.max(axis=-1, keepdims=True)
        logp = s - np.log(np.exp(s).sum(axis=-1, keepdims=True))
        return float(np.sum(logp * w))

    np.testing.assert_allclose(t.grad, numeric_grad(fwd, x), rtol=1e-5, atol=1e-8)


# ---------------------------------------------------------------------------
# Volumetric convolution
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 3])
def test_conv3d_matches_direct_summation(k):
    rng = np.random.default_rng(14)
    vol = rng.normal(size=(2, 4, 3, 5))
    ker = rng.normal(size=(3, 2, k, k, k))
    bias = rng.normal(size=(3,))
    out = T.conv3d(Tensor(vol), Tensor(ker), Tensor(bias))
    np.testing.assert_allclose(out.data, conv3d_direct(vol, ker, bias), rtol=1e-10, atol=1e-12)


def test_conv3d_grads_match_numeric():
    rng = np.random.default_rng(15)
    vol = rng.normal(size=(2, 3, 3, 3))
    ker = rng.normal(size=(2, 2, 3, 3, 3))
    bias = rng.normal(size=(2,))
    w = rng.normal(size=(2, 3, 3, 3))
    tv = Tensor(vol, requires_grad=True)
    tk = Tensor(ker, requires_grad=True)
    tb = Tensor(bias, requires_grad=True)
    with GradTape() as tape:
        out = T.conv3d(tv, tk, tb)
    tape.backward(out, seed=w)

    def fwd() -> float:
        return float(np.sum(conv3d_direct(vol, ker, bias) * w))

    np.testing.assert_allclose(tv.grad, numeric_grad(fwd, vol), rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(tk.grad, numeric_grad(fwd, ker), rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(tb.grad, numeric_grad(fwd, bias), rtol=1e-5, atol=1e-7)


def test_conv3d_rejects_even_kernel():
    with pytest.raises(ConfigError):
        T.conv3d(
            Tensor(np.zeros((1, 2, 2, 2))),
            Tensor(np.zeros((1, 1, 2, 2, 2))),
            Tensor(np.zeros(1)),
        )


def test_conv3d_rejects_channel_mismatch():
    with pytest.raises(DimensionError):
        T.conv3d(
            Tensor(np.zeros((2, 2, 2, 2))),
            Tensor(np.zeros((1, 3, 3, 3, 3))),
            Tensor(np.zeros(1)),
        )


# ---------------------------------------------------------------------------
# Adjoint dot-product identity: <J v, u> == <v, J^T u> for every op
# ---------------------------------------------------------------------------


def _pairwise_mix(a, b):
    pa, pb = T.softmax_pairwise(a, b)
    return pa + pb * 0.5


def _away_from_kinks(rng, shape):
    x = rng.normal(size=shape)
    return x + np.sign(x) * 0.2


ADJOINT_CASES = [
    ("add", lambda a, b: a + b, lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(4,))]),
    ("mul", lambda a, b: a * b, lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(3, 1))]),
    ("matmul", T.matmul, lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(4, 5))]),
    ("relu", T.relu, lambda rng: [_away_from_kinks(rng, (6, 2))]),
    ("exp", T.exp, lambda rng: [rng.normal(size=(2, 3))]),
    ("log", T.log, lambda rng: [rng.uniform(0.5, 2.0, size=(2, 3))]),
    ("mean", lambda a: T.reduce_mean(a, 0), lambda rng: [rng.normal(size=(5, 3))]),
    ("max", lambda a: T.reduce_max(a, 1), lambda rng: [rng.normal(size=(4, 6))]),
    ("log_softmax", T.log_softmax, lambda rng: [rng.normal(size=(4, 5))]),
    ("pairwise", _pairwise_mix, lambda rng: [rng.normal(size=(5,)), rng.normal(size=(5,))]),
    (
        "gather",
        lambda a: T.gather_rows(a, np.array([2, 0, 1, 2])),
        lambda rng: [rng.normal(size=(4, 3))],
    ),
    (
        "scatter",
        lambda t, s: T.scatter_add_rows(t, np.array([1, 0, 1]), s),
        lambda rng: [rng.normal(size=(4, 2)), rng.normal(size=(3, 2))],
    ),
    (
        "conv3d",
        T.conv3d,
        lambda rng: [
            rng.normal(size=(2, 3, 3, 3)),
            rng.normal(size=(2, 2, 3, 3, 3)),
            rng.normal(size=(2,)),
        ],
    ),
]


@pytest.mark.parametrize("name,build,make_arrays", ADJOINT_CASES, ids=[c[0] for c in ADJOINT_CASES])
def test_adjoint_identity(name, build, make_arrays):
    rng = np.random.default_rng(hash(name) % (2**32))
    arrays = make_arrays(rng)
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with GradTape() as tape:
        out = build(*tensors)
    u = rng.normal(size=out.shape)
    tape.backward(out, seed=u)
    vs = [rng.normal(size=a.shape) for a in arrays]
    eps = 1e-6

    def eval_at(sign: float) -> np.ndarray:
        shifted = [Tensor(a + sign * eps * v) for a, v in zip(arrays, vs)]
        with T.no_grad():
            return build(*shifted).data

    jvp = (eval_at(+1.0) - eval_at(-1.0)) / (2 * eps)
    lhs = sum(float(np.sum(t.grad * v)) for t, v in zip(tensors, vs))
    rhs = float(np.sum(u * jvp))
    assert abs(lhs - rhs) <= 1e-6 * max(1.0, abs(lhs), abs(rhs))


# ---------------------------------------------------------------------------
# Tape mechanics
# ---------------------------------------------------------------------------


def test_backward_replays_in_reverse_recording_order():
    x = Tensor(np.ones(3), requires_grad=True)
    with GradTape() as tape:
        y = T.relu(x)
        z = T.exp(y)
        s = T.reduce_sum(z, 0)
    assert [r.name for r in tape.records] == ["relu", "exp", "reduce_sum"]
    seen = []
    for rec in tape._records:
        orig = rec.backward
        rec.backward = lambda o=orig, n=rec.name: (seen.append(n), o())[1]
    tape.backward(s)
    assert seen == ["reduce_sum", "exp", "relu"]
    np.testing.assert_allclose(x.grad, np.e * np.ones(3), rtol=1e-12)


def test_gradient_accumulates_across_reuses():
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    with GradTape() as tape:
        s = T.reduce_sum(x * x + x, 0)
    tape.backward(s)
    np.testing.assert_allclose(x.grad, 2 * x.data + 1, rtol=1e-12)


def test_no_grad_suppresses_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    with GradTape() as tape:
        with T.no_grad():
            y = T.relu(x)
    assert len(tape) == 0
    assert not y.requires_grad


def test_constants_are_not_recorded():
    with GradTape() as tape:
        T.relu(Tensor(np.ones(3)))
    assert len(tape) == 0


def test_backward_seed_shape_mismatch():
    x = Tensor(np.ones(3), requires_grad=True)
    with GradTape() as tape:
        y = T.relu(x)
    with pytest.raises(DimensionError):
        tape.backward(y, seed=np.ones(4))


def test_precision_flows_through_ops():
    x32 = Tensor(np.ones((2, 2), dtype=np.float32))
    x64 = Tensor(np.ones((2, 2), dtype=np.float64))
    assert (x32 @ x32).dtype == np.float32
    assert (x64 @ x64).dtype == np.float64
    assert T.relu(x32 * 2.0).dtype == np.float32
    assert T.conv3d(
        Tensor(np.zeros((1, 2, 2, 2), np.float32)),
        Tensor(np.zeros((1, 1, 1, 1, 1), np.float32)),
        Tensor(np.zeros(1, np.float32)),
    ).dtype == np.float32


def test_integer_input_promotes_to_default_dtype():
    assert Tensor([1, 2, 3]).dtype == np.float32


def test_item_requires_single_element():
    assert Tensor([[3.5]]).item() == pytest.approx(3.5)
    with pytest.raises(DimensionError):
        Tensor([1.0, 2.0]).item()


# ---------------------------------------------------------------------------
# Gradient checker
# ---------------------------------------------------------------------------


def test_gradcheck_passes_on_smooth_composite():
    rng = np.random.default_rng(16)
    a = Tensor(rng.uniform(0.5, 1.5, size=(3, 4)), dtype=np.float64)
    b = Tensor(rng.uniform(0.5, 1.5, size=(4, 2)), dtype=np.float64)

    def f(a, b):
        return T.log(T.exp(T.matmul(a, b)))

    report = T.gradcheck(f, [a, b], tol=1e-6)
    assert report.passed, report.summary()
    assert report.n_excluded == 0
    assert report.n_checked == a.size + b.size


def test_gradcheck_excludes_kinks_without_failing():
    # Coordinates within one probe step of the relu hinge give meaningless
    # finite differences; they must be excluded, not failed.
    x = Tensor(np.array([3e-6, -3e-6, 1.0, -1.0]), dtype=np.float64)
    report = T.gradcheck(T.relu, [x], tol=1e-6)
    assert report.passed, report.summary()
    assert report.n_excluded == 2


def test_gradcheck_flags_wrong_analytic_gradient():
    # A deliberately wrong backward rule must be reported as a failure,
    # not silently absorbed by the kink-exclusion path.
    def badscale(t):
        out = Tensor(t.data * 2.0)

        def backward():
            if out.grad is not None:
                T._accumulate(t, -2.0 * out.grad)  # sign flipped on purpose

        T._record("badscale", (t,), (out,), backward)
        return out

    x = Tensor(np.array([0.7, -1.3, 0.4]), dtype=np.float64)
    report = T.gradcheck(badscale, [x], tol=1e-6)
    assert not report.passed
    assert report.failures
    assert report.n_excluded == 0


def test_gradcheck_requires_float64():
    x = Tensor(np.ones(2, dtype=np.float32))
    with pytest.raises(DomainError):
        T.gradcheck(lambda t: t * 1.0, [x])


def test_gradcheck_report_summary_mentions_worst_coordinate():
    x = Tensor(np.array([0.5, 1.5]), dtype=np.float64)
    report = T.gradcheck(T.exp, [x], tol=1e-6)
    assert "pass" in report.summary()
    assert "coords checked" in report.summary()
