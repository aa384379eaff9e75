"""Dense float64 matrices with a small reverse-mode autodiff tape and Adam.

Every value is a 2-D ``numpy.ndarray`` of dtype float64. A :class:`Tensor`
wraps one such array and remembers how it was produced; calling
:func:`backward` on a 1x1 tensor walks the recorded graph in reverse
topological order and accumulates gradients into every tensor created
with ``requires_grad=True``.

Example
-------
>>> w = Tensor(np.eye(2), requires_grad=True)
>>> x = Tensor(np.array([[1.0, 2.0]]))
>>> loss = tsum(matmul(x, w))
>>> backward(loss)
>>> w.grad
array([[1., 1.],
       [2., 2.]])
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError, TapeError

_ids = itertools.count()


def as_matrix(x, name="matrix") -> np.ndarray:
    """Coerce ``x`` to a C-contiguous 2-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D matrix, got shape {a.shape}")
    return np.ascontiguousarray(a)


class Tensor:
    """A node on the tape: forward value, gradient slot and backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "op", "id", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, *, op="leaf", parents=(), backward_fn=None):
        self.data = as_matrix(data)
        self.requires_grad = requires_grad
        self.grad = None
        self.op = op
        self.id = next(_ids)
        self._parents = tuple(parents)
        self._backward = backward_fn
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, op, parents, backward_fn) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite value produced by '{op}'")
    needs = any(p.requires_grad for p in parents)
    return Tensor(
        value,
        requires_grad=needs,
        op=op,
        parents=parents if needs else (),
        backward_fn=backward_fn if needs else None,
    )


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def custom_op(value, parents: Sequence[Tensor], backward_fn: Callable, op="custom") -> Tensor:
    """Record an operation whose forward value was computed elsewhere.

    ``backward_fn(g)`` receives the upstream gradient and returns one
    gradient array (or ``None``) per parent.
    """
    return _node(as_matrix(value), op, tuple(parents), backward_fn)


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _same_shape(a, b, "add")
    return _node(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    if np.isscalar(b):
        return scale(a, b)
    if np.isscalar(a):
        return scale(b, a)
    a, b = _lift(a), _lift(b)
    _same_shape(a, b, "mul")
    return _node(a.data * b.data, "mul", (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c: float) -> Tensor:
    a = _lift(a)
    c = float(c)
    return _node(a.data * c, "scale", (a,), lambda g: (g * c,))


def add_scalar(a, c: float) -> Tensor:
    a = _lift(a)
    return _node(a.data + float(c), "add_scalar", (a,), lambda g: (g,))


def relu(x) -> Tensor:
    x = _lift(x)
    mask = x.data > 0.0
    # subgradient at exactly 0 is 0
    return _node(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def square(x) -> Tensor:
    x = _lift(x)
    return _node(x.data * x.data, "square", (x,), lambda g: (2.0 * g * x.data,))


def log(x) -> Tensor:
    x = _lift(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _node(out, "log", (x,), lambda g: (g / x.data,))


def reciprocal(x) -> Tensor:
    x = _lift(x)
    with np.errstate(divide="ignore"):
        out = 1.0 / x.data
    return _node(out, "reciprocal", (x,), lambda g: (-g * out * out,))


# -- reductions and matrix ops ---------------------------------------------

def tsum(x) -> Tensor:
    x = _lift(x)
    shape = x.data.shape
    return _node(np.array([[x.data.sum()]]), "sum", (x,), lambda g: (np.full(shape, g[0, 0]),))


def mean(x) -> Tensor:
    x = _lift(x)
    shape = x.data.shape
    n = x.data.size
    return _node(np.array([[x.data.mean()]]), "mean", (x,), lambda g: (np.full(shape, g[0, 0] / n),))


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} x {b.shape}")
    return _node(a.data @ b.data, "matmul", (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` with the 1-row bias ``b`` repeated over the rows of x."""
    x, w, b = _lift(x), _lift(w), _lift(b)
    if x.shape[1] != w.shape[0] or b.shape != (1, w.shape[1]):
        raise DimensionError(f"affine: x{x.shape} w{w.shape} b{b.shape}")
    out = x.data @ w.data + b.data

    def back(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0, keepdims=True)

    return _node(out, "affine", (x, w, b), back)


def row_normalize(x) -> Tensor:
    """Divide each row by its sum."""
    x = _lift(x)
    s = x.data.sum(axis=1, keepdims=True)
    out = x.data / s

    def back(g):
        return ((g - (g * out).sum(axis=1, keepdims=True)) / s,)

    return _node(out, "row_normalize", (x,), back)


def sq_dist(a, b) -> Tensor:
    """Squared Euclidean distances between rows of ``a`` (N x m) and ``b`` (C x m)."""
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"sq_dist: {a.shape} vs {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = np.einsum("ncm,ncm->nc", diff, diff)

    def back(g):
        w = 2.0 * g[:, :, None] * diff
        return w.sum(axis=1), -w.sum(axis=0)

    return _node(out, "sq_dist", (a, b), back)


def mse(a, b) -> Tensor:
    """Mean of squared elementwise differences."""
    a, b = _lift(a), _lift(b)
    _same_shape(a, b, "mse")
    diff = a.data - b.data
    n = diff.size
    out = np.array([[np.mean(diff * diff)]])

    def back(g):
        d = (2.0 * g[0, 0] / n) * diff
        return d, -d

    return _node(out, "mse", (a, b), back)


# -- backward --------------------------------------------------------------

def _topo(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    A given loss node may be differentiated once; build a fresh graph for
    the next step.
    """
    if loss.data.shape != (1, 1):
        raise TapeError(f"backward needs a scalar (1x1) loss, got {loss.data.shape}")
    if loss._consumed:
        raise TapeError("backward already ran on this loss; rebuild the graph")
    loss._consumed = True
    if not loss.requires_grad:
        return
    grads = {loss.id: np.ones((1, 1))}
    for node in reversed(_topo(loss)):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                raise TapeError(f"'{node.op}' returned gradient {pg.shape} for input {parent.data.shape}")
            prev = grads.get(parent.id)
            grads[parent.id] = pg if prev is None else prev + pg


# -- Adam ------------------------------------------------------------------

@dataclass
class AdamState:
    """Moment estimates for a fixed, ordered list of parameters."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        shapes = [np.shape(_data(p)) for p in params]
        return cls(m=[np.zeros(s) for s in shapes], v=[np.zeros(s) for s in shapes], **kw)


def _data(p):
    return p.data if isinstance(p, Tensor) else p


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update, in place.

    ``params`` are Tensors (their ``.data`` is replaced) or float arrays
    (updated in place). A ``None`` gradient means the parameter took no
    part in this step: it and its moments are left untouched. An all-zero
    gradient is a real zero gradient and decays the moments.
    Returns the list of updated parameter arrays.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not (len(params) == len(grads) == len(state.m)):
        raise DimensionError("params, grads and Adam moments differ in length")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    out = []
    for idx, (p, g) in enumerate(zip(params, grads)):
        arr = _data(p)
        if g is None:
            out.append(arr)
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != arr.shape or state.m[idx].shape != arr.shape:
            raise DimensionError(f"adam: parameter {idx} has shape {arr.shape}, gradient {g.shape}")
        m = b1 * state.m[idx] + (1.0 - b1) * g
        v = b2 * state.v[idx] + (1.0 - b2) * (g * g)
        state.m[idx], state.v[idx] = m, v
        new = arr - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if isinstance(p, Tensor):
            p.data = new
        else:
            arr[...] = new
        out.append(new)
    return out
