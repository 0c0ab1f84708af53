"""A short tour of the tensor autodiff core.

Builds a couple of small computations, pulls gradients out with
``backward``, and cross-checks one of them against finite differences --
the same oracle the test suite uses, shown here at a human scale.
"""

import numpy as np

from aat.tensor import (Tensor, backward, cross_entropy, matmul, relu,
                        sum_all)

# --- a scalar chain ---------------------------------------------------------
# y = sum(relu(x @ w)); dy/dw has a closed form we can eyeball.

x = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=False)
w = Tensor(np.array([[0.7], [-0.3]]), requires_grad=True)

y = sum_all(relu(matmul(x, w)))
backward(y)
print("y =", float(y.data))
print("dy/dw =", w.grad.ravel())

# --- the verification habit -------------------------------------------------
# Perturb each weight by +-h and compare the slope. This is exactly what a
# reader should do whenever a backward rule looks suspicious.

h = 1e-6
fd = np.zeros_like(w.data)
for i in range(w.data.size):
    for sign in (+1, -1):
        wp = w.data.copy().ravel()
        wp[i] += sign * h
        out = sum_all(relu(matmul(x, Tensor(wp.reshape(w.data.shape)))))
        fd.ravel()[i] += sign * float(out.data) / (2 * h)
print("finite-difference dy/dw =", fd.ravel())
print("max abs diff:", np.abs(fd - w.grad).max())

# --- gradients w.r.t. an input only -----------------------------------------
# Attacks differentiate the loss w.r.t. the image while leaving parameter
# grads untouched; `wrt` restricts accumulation to the listed leaves.

logits = Tensor(np.random.default_rng(0).normal(size=(4, 3)), requires_grad=True)
labels = np.array([0, 2, 1, 1])
loss = cross_entropy(logits, labels)
backward(loss, wrt=[logits])
print("\ncross-entropy:", float(loss.data))
print("per-logit gradient row 0:", logits.grad[0])
print("rows sum to ~0 (softmax identity):", np.abs(logits.grad.sum(axis=1)).max())
