"""Finite-difference verification suite: every op, a full layer, a small network.

Op components resolve their target through the tensor module at call time, so
a monkeypatched op (e.g. a deliberately broken backward in a test) is caught
and named in the report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .heads import segmentation_loss
from .layer import init_layer_params, layer_geometry, pvc_forward
from .neighbors import NeighborConfig
from .network import NetworkConfig, forward, init_network_params, network_geometry
from .tensor import GradcheckReport, Tensor, gradcheck

SUITE_TOL = 1e-4
SUITE_STEP = 1e-5


@dataclass
class ComponentResult:
    name: str
    report: GradcheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        return f"{self.name:<18} {self.report.summary()}"


@dataclass
class SuiteResult:
    components: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.components)

    def failing(self) -> list:
        return [c for c in self.components if not c.passed]

    def lines(self) -> list:
        return [c.line() for c in self.components]


def _leaf(rng, shape, offset=0.0, positive=False) -> Tensor:
    data = rng.standard_normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    elif offset:
        data = data + offset * np.sign(data)
    return Tensor(data, requires_grad=True)


def _op_components(rng, tol, h):
    def check(f, inputs):
        return lambda: gradcheck(f, inputs, tol=tol, h=h)

    a23 = lambda: _leaf(rng, (2, 3))
    yield "add", check(lambda x, y: T.add(x, y), [a23(), _leaf(rng, (3,))])
    yield "sub", check(lambda x, y: T.sub(x, y), [a23(), a23()])
    yield "mul", check(lambda x, y: T.mul(x, y), [a23(), _leaf(rng, (3,))])
    yield "relu", check(lambda x: T.relu(x), [_leaf(rng, (3, 4), offset=0.3)])
    yield "exp", check(lambda x: T.exp(x), [a23()])
    yield "log", check(lambda x: T.log(x), [_leaf(rng, (3, 4), positive=True)])
    yield "matmul", check(lambda x, y: T.matmul(x, y), [_leaf(rng, (3, 4)), _leaf(rng, (4, 5))])
    yield "softmax_pairwise", check(
        lambda x, y: T.concat(list(T.softmax_pairwise(x, y)), axis=0), [a23(), a23()]
    )
    yield "reduce_sum", check(lambda x: T.reduce_sum(x, 0), [_leaf(rng, (4, 3))])
    yield "reduce_mean", check(lambda x: T.reduce_mean(x, 1), [_leaf(rng, (4, 3))])
    yield "reduce_max", check(
        lambda x: T.reduce_max(x, 0),
        [Tensor(rng.permutation(12.0 * np.arange(1, 13)).reshape(4, 3), requires_grad=True)],
    )
    idx = np.array([3, 0, 2, 2, 1])
    yield "gather_rows", check(lambda x: T.gather_rows(x, idx), [_leaf(rng, (4, 3))])
    yield "scatter_add_rows", check(
        lambda t, s: T.scatter_add_rows(t, idx, s), [_leaf(rng, (4, 3)), _leaf(rng, (5, 3))]
    )
    yield "reshape", check(lambda x: T.reshape(x, (3, 2)), [a23()])
    yield "transpose", check(lambda x: T.transpose(x), [a23()])
    yield "concat", check(lambda x, y: T.concat([x, y], axis=1), [a23(), _leaf(rng, (2, 4))])
    yield "log_softmax", check(lambda x: T.log_softmax(x), [a23()])
    yield "softmax", check(lambda x: T.softmax(x), [a23()])
    yield "conv3d", check(
        lambda v, k, b: T.conv3d(v, k, b),
        [_leaf(rng, (2, 3, 3, 3)), _leaf(rng, (3, 2, 3, 3, 3)), _leaf(rng, (3,))],
    )


def _layer_component(rng):
    n, c_in, c_out, grid, k = 32, 4, 8, 4, 4
    positions = rng.random((n, 3))
    nbr = NeighborConfig(k=k, dilation=1)
    geometry = layer_geometry(positions, grid, nbr, method="brute")
    params = init_layer_params(rng, c_in, c_out, dtype=np.float64, k_neighbors=k)
    features = _leaf(rng, (n, c_in))
    tensors = [t for _, t in params.named()]

    def f(feats, *_):
        return pvc_forward(
            positions, feats, params, grid, nbr, geometry=geometry
        )

    return lambda: gradcheck(f, [features] + tensors, tol=SUITE_TOL, h=SUITE_STEP)


def _network_component(rng):
    config = NetworkConfig(
        num_classes=3,
        in_features=3,
        num_layers=2,
        grid_sizes=(4, 2),
        k_neighbors=4,
        dilations=(1, 2),
        base_channels=4,
        width=1.0,
    )
    n = 32
    positions = rng.random((n, 3))
    labels = rng.integers(0, 3, size=n)
    geometry = network_geometry(positions, config, method="brute")
    params = init_network_params(rng, config, dtype=np.float64)
    features = _leaf(rng, (n, 3))
    tensors = [t for _, t in params.named()]

    def f(feats, *_):
        result = forward(config, params, positions, feats, geometry=geometry)
        return segmentation_loss(result.head_log_probs, labels)[0]

    return lambda: gradcheck(f, [features] + tensors, tol=SUITE_TOL, h=SUITE_STEP)


def gradcheck_suite(tol: float = SUITE_TOL, seed: int = 0) -> SuiteResult:
    """Check every component's reverse-mode gradient against central differences."""
    rng = np.random.default_rng(seed)
    components = []
    for name, build in _op_components(rng, tol, SUITE_STEP):
        components.append(ComponentResult(name=name, report=build()))
    for name, build in (
        ("pvc_layer", _layer_component(rng)),
        ("network", _network_component(rng)),
    ):
        components.append(ComponentResult(name=name, report=build()))
    return SuiteResult(components=components)
