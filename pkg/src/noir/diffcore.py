"""Small define-by-run reverse-mode autodiff on float32 numpy arrays.

Every op returns a new :class:`Tensor` holding its parents and a closure
mapping the output gradient to one gradient per parent.  The graph lives
only as long as the tensors of one forward pass.

Only first-order gradients are supported.  Broadcasting is limited to
adding a 1-D row vector to every row of a 2-D tensor.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class GraphError(RuntimeError):
    """The graph cannot be differentiated as requested."""


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    else:
        out.parents = ()
        out.backward_fn = None
    out.op = op
    return out


# ---------------------------------------------------------------------------
# primitives


def linear(x, w, b=None) -> Tensor:
    """``x @ w.T + b`` for a single vector or a batch of row vectors."""
    x, w = as_tensor(x), as_tensor(w)
    if w.data.ndim != 2 or x.data.ndim not in (1, 2) or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: x {x.shape} does not conform to W {w.shape}")
    out = x.data @ w.data.T
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"linear: bias {b.shape} does not match W {w.shape}")
        out = out + b.data
        parents.append(b)

    def backward(g):
        gx = g @ w.data if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = np.outer(g, x.data) if g.ndim == 1 else g.T @ x.data
        if b is None:
            return gx, gw
        gb = (g if g.ndim == 1 else g.sum(axis=0)) if b.requires_grad else None
        return gx, gw, gb

    return _node(out.astype(DTYPE, copy=False), parents, backward, "linear")


def _broadcast_pair(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape:
        return False
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return True
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    rowwise = _broadcast_pair(a, b, "add")

    def backward(g):
        gb = None
        if b.requires_grad:
            gb = g.sum(axis=0) if rowwise else g
        return g, gb

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    rowwise = _broadcast_pair(a, b, "sub")

    def backward(g):
        gb = None
        if b.requires_grad:
            gb = -(g.sum(axis=0) if rowwise else g)
        return g, gb

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product of same-shaped tensors; a python scalar scales."""
    if np.isscalar(b):
        return scale(a, b)
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return _node(a.data * b.data, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = DTYPE(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def sine(a, omega0: float = 30.0) -> Tensor:
    """``sin(omega0 * a)``."""
    a = as_tensor(a)
    w = DTYPE(omega0)
    u = w * a.data
    return _node(np.sin(u), (a,), lambda g: (g * (w * np.cos(u)),), "sine")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(DTYPE)
    return _node(s, (a,), lambda g: (g * s * (1 - s),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, DTYPE(0)), (a,), lambda g: (g * mask,), "relu")


def silu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(DTYPE)
    return _node(x * s, (a,), lambda g: (g * (s * (1 + x * (1 - s))),), "silu")


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (a,), backward, "softmax")


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _node(out, (a,), backward, "log_softmax")


def total(a) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    a = as_tensor(a)
    shape = a.shape
    return _node(np.asarray(a.data.sum(), dtype=DTYPE), (a,),
                 lambda g: (np.full(shape, g, dtype=DTYPE),), "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.data.size
    return _node(np.asarray(a.data.mean(), dtype=DTYPE), (a,),
                 lambda g: (np.full(shape, g / n, dtype=DTYPE),), "mean")


def take(a, key) -> Tensor:
    """Basic (slice) indexing; the gradient scatters back into zeros."""
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=DTYPE)
        out[key] = g
        return (out,)

    return _node(a.data[key], (a,), backward, "take")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


ACTIVATIONS = ("sine", "sigmoid", "softmax", "silu", "relu", "none")


def activation(u, kind: str, omega0: float = 30.0) -> Tensor:
    if kind == "sine":
        return sine(u, omega0)
    if kind == "sigmoid":
        return sigmoid(u)
    if kind == "softmax":
        return softmax(u)
    if kind == "silu":
        return silu(u)
    if kind == "relu":
        return relu(u)
    if kind == "none":
        return as_tensor(u)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


# ---------------------------------------------------------------------------
# losses


def mse(pred, target) -> Tensor:
    return mean(square(sub(pred, as_tensor(target))))


def cross_entropy(logits, onehot) -> Tensor:
    """Mean over rows of ``-sum(onehot * log_softmax(logits))``."""
    logits = as_tensor(logits)
    onehot = as_tensor(onehot)
    n = logits.shape[0] if logits.data.ndim == 2 else 1
    return scale(total(mul(log_softmax(logits), onehot)), -1.0 / n)


# ---------------------------------------------------------------------------
# reverse pass


def topo_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, every node after its parents."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``.

    Leaves the loss does not depend on receive zeros.  Contributions from a
    tensor used several times are summed.
    """
    wrt = list(wrt)
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data):
        raise FloatingPointError(f"loss is not finite: {loss.data}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=DTYPE)}
    targets = {id(t) for t in wrt}
    leaf_grads: dict[int, np.ndarray] = {}
    for node in reversed(topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if id(node) in targets:
            leaf_grads[id(node)] = g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=DTYPE)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [leaf_grads.get(id(t), np.zeros(t.shape, dtype=DTYPE)) for t in wrt]


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, lr: float):
        self.lr = lr
        self.steps = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
        _check_conform(params, grads)
        self.steps += 1
        lr = DTYPE(self.lr)
        for p, g in zip(params, grads):
            p -= lr * g
        return list(params)


class AdamW:
    """Adam with decoupled weight decay; updates parameters in place."""

    def __init__(self, params: Sequence[np.ndarray], lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.steps = 0
        self.m = [np.zeros_like(p, dtype=DTYPE) for p in params]
        self.v = [np.zeros_like(p, dtype=DTYPE) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
        _check_conform(params, grads)
        if len(params) != len(self.m) or any(p.shape != m.shape for p, m in zip(params, self.m)):
            raise ShapeError("AdamW: parameters do not match optimizer state")
        self.steps += 1
        t = self.steps
        b1, b2 = DTYPE(self.beta1), DTYPE(self.beta2)
        lr = DTYPE(self.lr)
        decay = DTYPE(1.0 - self.lr * self.weight_decay)
        bc1 = DTYPE(1.0 - self.beta1 ** t)
        bc2 = DTYPE(1.0 - self.beta2 ** t)
        eps = DTYPE(self.eps)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.weight_decay:
                p *= decay
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        return list(params)


def _check_conform(params, grads):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"parameter {p.shape} vs gradient {g.shape}")
