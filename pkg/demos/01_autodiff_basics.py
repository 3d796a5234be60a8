"""A tour of the tensor engine: building graphs, backprop, gradient checking.

Run:  python demos/01_autodiff_basics.py
"""

import numpy as np

import docrelex.autodiff as ad
from docrelex.autodiff import Tensor, backward, grad_check

# Leaf tensors opt in to gradients; everything is float64.
x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
w = Tensor(np.array([[0.5, -1.0], [0.25, 0.75]]), requires_grad=True)

# Ops compose into a graph; `backward` fills .grad on every leaf.
y = ad.sum_(ad.tanh(ad.matmul(x, w)))
backward(y)
print("loss:", y.item())
print("dL/dx:\n", x.grad)
print("dL/dw:\n", w.grad)

# Gradients accumulate across backward calls until explicitly zeroed.
x.zero_grad(), w.zero_grad()

# Numerically stable reductions: logsumexp never overflows.
big = Tensor(np.array([1000.0, 1000.0, 999.0]))
print("\nlogsumexp([1000, 1000, 999]) =", ad.logsumexp(big, axis=0).item())

# Softmax rows are probability distributions.
probs = ad.softmax(Tensor(np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])), axis=1)
print("softmax rows:\n", probs.data, "\nrow sums:", probs.data.sum(axis=1))

# The built-in checker compares every gradient against central differences.
params = {"x": x, "w": w}
report = grad_check(lambda: ad.sum_(ad.sigmoid(ad.matmul(x, w))), params, tol=1e-6)
print("\ngradient check:")
print(report.summary())
