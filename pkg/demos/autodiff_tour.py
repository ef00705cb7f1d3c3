"""A walk through the tensor engine: taped forward passes, reverse-mode
gradients, and checking them against finite differences.

Run with: python demos/autodiff_tour.py
"""

import numpy as np

from pvcnet.tensor import GradTape, Tensor, gradcheck, matmul, reduce_sum, relu

rng = np.random.default_rng(0)

# Leaves are tensors that want gradients. Everything computed from them is
# recorded on the active tape.
w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
x = Tensor(rng.standard_normal((4, 3)))

with GradTape() as tape:
    hidden = relu(matmul(x, w))
    loss = reduce_sum(reduce_sum(hidden, 1), 0)
print(f"taped {len(tape)} operations, loss = {loss.item():.4f}")

# backward() seeds the root with ones and replays the tape in reverse.
tape.backward(loss)
print("dloss/dw =\n", w.grad)

# The same gradient by hand: d(sum relu(xw))/dw = x^T @ 1[xw > 0].
mask = (x.data @ w.data > 0).astype(float)
print("max |analytic - hand| =", np.abs(w.grad - x.data.T @ mask).max())

# gradcheck compares the taped gradient of a random projection of f's
# outputs against central differences, coordinate by coordinate. Inputs
# must be float64 leaves; relu kinks near zero are detected and excluded.
w64 = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
b64 = Tensor(rng.standard_normal((2,)), requires_grad=True)


def f(wt, bt):
    return relu(matmul(x, wt) + bt)


report = gradcheck(f, [w64, b64], seed=1)
print(report.summary())
