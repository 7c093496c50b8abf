"""A tour of the tensor engine: forward ops, backward, and gradient checking.

Run:  python demos/01_autodiff_and_gradcheck.py
"""

import numpy as np

from fatlab import Tensor, finite_difference_gradient, one_hot, softmax_cross_entropy
from fatlab.tensor import conv2d, linear, relu

print("=" * 64)
print("1. Forward ops build a tape; backward fills .grad on the leaves")
print("=" * 64)

x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
loss = (x * x).sum()
loss.backward()
print("d(sum x^2)/dx =\n", x.grad, "   (expected 2x)")

# -----------------------------------------------------------------
# A two-layer MLP loss, differentiated w.r.t. the *input* — exactly
# what the FGSM/PGD attacks need.
# -----------------------------------------------------------------
rng = np.random.default_rng(0)
w1 = Tensor(rng.normal(size=(4, 8)) * 0.5, requires_grad=True)
b1 = Tensor(np.zeros(8), requires_grad=True)
w2 = Tensor(rng.normal(size=(8, 3)) * 0.5, requires_grad=True)
b2 = Tensor(np.zeros(3), requires_grad=True)
labels = one_hot(np.array([0, 2]), 3)


def forward(inp):
    hidden = relu(linear(inp, w1, b1))
    return softmax_cross_entropy(linear(hidden, w2, b2), labels)


x0 = rng.uniform(-1, 1, size=(2, 4))
x = Tensor(x0, requires_grad=True)
loss = forward(x)
loss.backward()
print(f"\nMLP loss = {loss.item():.6f}")
print("input gradient (first row):", np.round(x.grad[0], 5))

print("\n" + "=" * 64)
print("2. The independent oracle: central finite differences")
print("=" * 64)

fd = finite_difference_gradient(lambda v: forward(Tensor(v)).item(), x0)
err = np.abs(fd - x.grad).max() / np.abs(fd).max()
print(f"max relative error autodiff vs finite differences: {err:.2e}")
assert err < 1e-6

print("\n" + "=" * 64)
print("3. Convolution against the six-nested-loop definition")
print("=" * 64)

img = Tensor(rng.normal(size=(1, 2, 6, 6)))
ker = Tensor(rng.normal(size=(3, 2, 3, 3)))
bias = Tensor(np.zeros(3))
out = conv2d(img, ker, bias, stride=1, padding=1)
print("conv output shape:", out.shape)

brute = np.zeros_like(out.data)
pad = np.pad(img.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
for f in range(3):
    for i in range(6):
        for j in range(6):
            for c in range(2):
                for u in range(3):
                    for v in range(3):
                        brute[0, f, i, j] += pad[0, c, i + u, j + v] * ker.data[f, c, u, v]
print("max |fast - loop oracle| =", np.abs(out.data - brute).max())
