"""Dense tensors with reverse-mode automatic differentiation.

The graph is implicit: every operation that produces a tensor from
differentiable inputs attaches a backward closure to the output. Calling
`backward` on a scalar replays the closures in reverse topological order
and accumulates gradients (by summation) into the participating leaves.

Float32 is the working precision for training; build tensors from
float64 arrays to run the whole graph in double precision, which the
finite-difference gradient checks rely on.
"""

from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionError, UsageError, ValidationError

DEFAULT_DTYPE = np.float32


class Tensor:
    """A node in the differentiation graph.

    Leaves are tensors created directly from data (parameters, inputs).
    Non-leaf tensors carry the closure that maps the output gradient to
    the gradients of their parents.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _make(data: np.ndarray, parents: Tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)

    def bw(g):
        return (g * s,)

    return _make(a.data * s, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), bw)


def zeros_like(a: Tensor) -> Tensor:
    """A constant zero tensor of the same shape; never carries gradient."""
    return Tensor(np.zeros(a.shape, dtype=a.dtype))


def concat(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise DimensionError(f"concat: leading shapes differ, {a.shape} vs {b.shape}")
    split = a.data.shape[-1]

    def bw(g):
        return g[..., :split], g[..., split:]

    return _make(np.concatenate([a.data, b.data], axis=-1), (a, b), bw)


def flatten(a: Tensor) -> Tensor:
    n = a.data.shape[0]
    shape = a.data.shape

    def bw(g):
        return (g.reshape(shape),)

    return _make(a.data.reshape(n, -1), (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw)


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x: Tensor, w: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2D cross-correlation over NCHW input with OIHW kernels."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d: need 4-d input and kernel, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise DimensionError(f"conv2d: input channels {cin} != kernel channels {cin_w}")
    if bias.data.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if (h + 2 * pad - kh) % stride or (wd + 2 * pad - kw) % stride:
        raise DimensionError(
            f"conv2d: non-integral output extent for input {x.shape}, kernel {w.shape}, "
            f"stride {stride}, pad {pad}"
        )
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (n, cin, ho, wo, kh, kw)
    # im2col: one large matmul instead of a 6-d contraction
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, cin * kh * kw)
    wmat = w.data.reshape(cout, -1)
    out = (cols @ wmat.T + bias.data).reshape(n, ho, wo, cout)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)).astype(x.dtype, copy=False)

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        dw = (g2.T @ cols).reshape(w.data.shape).astype(w.dtype, copy=False)
        db = g2.sum(axis=0).astype(bias.dtype, copy=False)
        dwin = (g2 @ wmat).reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                dxp[:, :, u : u + stride * (ho - 1) + 1 : stride,
                    v : v + stride * (wo - 1) + 1 : stride] += dwin[..., u, v]
        dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
        return dx, dw, db

    return _make(out, (x, w, bias), bw)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route to the first window slot."""
    if x.data.ndim != 4:
        raise DimensionError(f"max_pool2d: need 4-d input, got {x.shape}")
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise DimensionError(f"max_pool2d: extents must be even, got {x.shape}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        db = np.zeros_like(blocks)
        np.put_along_axis(db, idx[..., None], g[..., None], axis=-1)
        dx = db.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (dx.reshape(n, c, h, w),)

    return _make(out, (x,), bw)


# ---------------------------------------------------------------------------
# loss


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over the batch."""
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy: need N x C logits, got {logits.shape}")
    n, c = logits.data.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"cross_entropy: labels shape {labels.shape} != ({n},)")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValidationError(f"cross_entropy: labels must lie in [0, {c})")
    ls = log_softmax(logits.data)
    loss = -ls[np.arange(n), labels].mean()

    def bw(g):
        grad = np.exp(ls)
        grad[np.arange(n), labels] -= 1.0
        grad *= g / n
        return (grad.astype(logits.dtype, copy=False),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor, wrt: Optional[Iterable[Tensor]] = None) -> None:
    """Accumulate dLoss/dLeaf into every requires_grad leaf.

    When `wrt` is given, only those tensors receive gradient; everything
    else in the graph is left untouched (used by the attack loop, which
    needs input gradients without polluting parameter gradients).
    """
    if loss.data.size != 1:
        raise UsageError(f"backward: loss must be scalar, got shape {loss.shape}")

    targets = None if wrt is None else {id(t) for t in wrt}

    # Iterative post-order topological sort.
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad and (targets is None or id(node) in targets):
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
