"""
Reverse-mode gradients on a tape
================================

Every differentiable operation records a node while a ``Tape`` is active.
``backward`` walks those nodes in reverse and hands back one gradient per
leaf tensor. Here we differentiate a tiny dilated convolution through a
mean-squared loss and compare the result against central differences.
"""

import numpy as np

from tsanomaly import autodiff as ad
from tsanomaly.autodiff import Tape, Tensor

rng = np.random.default_rng(0)

# scalar warm-up: d(x*x)/dx at 3 is 6
x = Tensor(3.0, requires_grad=True)
with Tape() as tape:
    y = x * x
print("d(x^2)/dx at 3:", ad.backward(y, tape)[x])

# a causal conv with dilation 2: output t reads inputs t and t-2 only
signal = Tensor([[1.0], [2.0], [3.0], [4.0]])
kernel = Tensor(np.ones((2, 1, 1)))
print("causal dilated conv:", ad.conv1d_dilated(signal, kernel, np.zeros(1), dilation=2).data.ravel())

# gradients of a loss w.r.t. kernel and bias
inputs = rng.normal(size=(16, 3))
target = rng.normal(size=(16, 4))
k = Tensor(rng.normal(size=(3, 3, 4)), requires_grad=True)
b = Tensor(np.zeros(4), requires_grad=True)
with Tape() as tape:
    loss = ad.mse(ad.tanh(ad.conv1d_dilated(inputs, k, b, dilation=2)), target)
grads = ad.backward(loss, tape)
print(f"loss {loss.item():.4f}; |dL/dk| = {np.linalg.norm(grads[k]):.4f}; dL/db = {grads[b].round(4)}")

# the same gradient, checked numerically over every kernel entry
def loss_of_kernel(flat):
    kk = ad.reshape(flat, (3, 3, 4))
    return ad.mse(ad.tanh(ad.conv1d_dilated(inputs, kk, b.data, dilation=2)), target)

err = ad.finite_difference_check(loss_of_kernel, k.data.ravel())
print(f"max relative disagreement with central differences: {err:.2e}")

# non-finite values are caught where they appear rather than at the loss
try:
    with np.errstate(invalid="ignore"):
        ad.mul(Tensor([np.inf]), Tensor([0.0]))
except FloatingPointError as exc:
    print("caught:", exc)
