"""The differentiable core, from a single attention call to an Adam fit.

Shows scaled dot-product attention behaving as a content-addressed
average, verifies a reverse-mode gradient against central differences,
and minimizes a tiny least-squares problem with the Adam update.
"""

import numpy as np

from bikefault.numerics import AdamState, Tensor, adam_step, matmul, softmax_rows
from bikefault.model import scaled_dot_attention

# 1. attention with a sharp query: the first output row focuses on key 2
q = np.array([[0.0, 8.0], [0.5, 0.5]])
k = np.array([[8.0, 0.0], [1.0, 1.0], [0.0, 8.0]])
v = np.array([[10.0, 0.0], [5.0, 5.0], [0.0, 10.0]])
out, weights = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v), return_weights=True)
print("attention weights (rows sum to 1):")
print(np.round(weights.data, 3))
print("attended values:")
print(np.round(out.data, 3), "\n")

# 2. reverse-mode gradient vs central differences
rng = np.random.default_rng(0)
w = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
x = rng.standard_normal((4, 3))
weighting = rng.standard_normal((4, 3))


def loss_value():
    logits = x @ w.data
    e = np.exp(logits - logits.max(-1, keepdims=True))
    return float((e / e.sum(-1, keepdims=True) * weighting).sum())


(softmax_rows(matmul(Tensor(x), w)) * Tensor(weighting)).sum().backward()

h = 1e-6
i, j = 1, 2
keep = w.data[i, j]
w.data[i, j] = keep + h
fp = loss_value()
w.data[i, j] = keep - h
fm = loss_value()
w.data[i, j] = keep
numeric = (fp - fm) / (2 * h)
print(f"dL/dw[{i},{j}]: reverse-mode {w.grad[i, j]:+.8f}  central-diff {numeric:+.8f}\n")

# 3. Adam on least squares: w -> argmin ||A w - b||^2
A = rng.standard_normal((20, 4))
target = rng.standard_normal(4)
b = A @ target
w_fit = {"w": np.zeros(4)}
state = AdamState(lr=0.05)
for step in range(400):
    residual = A @ w_fit["w"] - b
    adam_step(w_fit, {"w": 2 * A.T @ residual / len(b)}, state)
    if step % 100 == 0:
        print(f"step {step:3d}: squared error {float(residual @ residual):.6f}")
print(f"recovered weights close to target: {np.allclose(w_fit['w'], target, atol=1e-3)}")
