"""Dense-tensor reverse-mode autodiff on numpy arrays.

Every op records its parents and a backward closure; ``backward()``
replays the tape in reverse creation order.  Arrays are float64
throughout so gradient checks run at full double precision, and all
computation is plain single-threaded numpy, which keeps runs
bit-reproducible for a fixed seed.

Shape-changing ops broadcast like numpy; gradients are summed back to
the parent's shape.  A module-level switch (``no_grad``) turns the tape
off for inference.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "no_grad",
    "matmul",
    "concat",
    "gather_rows",
    "scatter_add_rows",
    "softmax",
    "cross_entropy_logits",
    "layer_norm",
    "sigmoid",
    "tanh",
    "relu",
    "one_hot",
    "cosine_similarity",
]

_GRAD_ENABLED = True

#: Set to True to assert finiteness of every produced array (slow; used
#: by tests and while debugging numeric blowups).
CHECK_FINITE = False

_ids = itertools.count()


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        arr = np.asarray(data, dtype=np.float64)
        if CHECK_FINITE:
            assert np.isfinite(arr).all(), "non-finite value entered the graph"
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self._id = next(_ids)

    # -- bookkeeping --------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[Tensor] = [self]
        while stack:
            t = stack.pop()
            if t._id in seen or not t.requires_grad:
                continue
            seen.add(t._id)
            topo.append(t)
            stack.extend(t._parents)
        topo.sort(key=lambda t: t._id, reverse=True)
        self.grad = np.ones_like(self.data)
        for t in topo:
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    # -- elementwise arithmetic ----------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other)
        out_data = self.data + other.data
        req = self.requires_grad or other.requires_grad
        out = Tensor(out_data, requires_grad=req, _parents=(self, other))
        if out.requires_grad:
            def backward(g: np.ndarray) -> None:
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g, other.shape))
            out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = _as_tensor(other)
        out = Tensor(
            self.data * other.data,
            requires_grad=self.requires_grad or other.requires_grad,
            _parents=(self, other),
        )
        if out.requires_grad:
            def backward(g: np.ndarray) -> None:
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g * other.data, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g * self.data, other.shape))
            out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-_as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) + (-self)

    def __truediv__(self, other) -> "Tensor":
        return self * (_as_tensor(other) ** -1.0)

    def __rtruediv__(self, other) -> "Tensor":
        return _as_tensor(other) * (self ** -1.0)

    def __pow__(self, power: float) -> "Tensor":
        out = Tensor(self.data ** power, requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            def backward(g: np.ndarray) -> None:
                self._accumulate(g * power * self.data ** (power - 1.0))
            out._backward = backward
        return out

    # -- reductions and shaping ----------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(
            self.data.sum(axis=axis, keepdims=keepdims),
            requires_grad=self.requires_grad,
            _parents=(self,),
        )
        if out.requires_grad:
            def backward(g: np.ndarray) -> None:
                if axis is None:
                    self._accumulate(np.broadcast_to(g, self.shape).copy())
                else:
                    gg = g if keepdims else np.expand_dims(g, axis)
                    self._accumulate(np.broadcast_to(gg, self.shape).copy())
            out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            def backward(g: np.ndarray) -> None:
                self._accumulate(g.reshape(self.shape))
            out._backward = backward
        return out

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        out = Tensor(self.data.transpose(axes), requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            inverse = tuple(np.argsort(axes))
            def backward(g: np.ndarray) -> None:
                self._accumulate(g.transpose(inverse))
            out._backward = backward
        return out

    def __getitem__(self, key) -> "Tensor":
        out = Tensor(self.data[key], requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            parts = key if isinstance(key, tuple) else (key,)
            fancy = any(isinstance(p, (np.ndarray, list)) for p in parts)
            def backward(g: np.ndarray) -> None:
                full = np.zeros_like(self.data)
                if fancy:
                    np.add.at(full, key, g)
                else:
                    full[key] = g
                self._accumulate(full)
            out._backward = backward
        return out

    # -- nonlinearities -------------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)
        out = Tensor(out_data, requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            def backward(g: np.ndarray) -> None:
                self._accumulate(g * out_data)
            out._backward = backward
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            def backward(g: np.ndarray) -> None:
                self._accumulate(g / self.data)
            out._backward = backward
        return out


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul expects 2-D or batched operands")
    out = Tensor(
        np.matmul(a.data, b.data),
        requires_grad=a.requires_grad or b.requires_grad,
        _parents=(a, b),
    )
    if out.requires_grad:
        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._accumulate(_unbroadcast(gb, b.shape))
        out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        requires_grad=any(t.requires_grad for t in tensors),
        _parents=tuple(tensors),
    )
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward(g: np.ndarray) -> None:
            for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    index = [slice(None)] * g.ndim
                    index[axis] = slice(start, stop)
                    t._accumulate(g[tuple(index)])
        out._backward = backward
    return out


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup (embedding): table (V, D), indices int array of any
    shape; result has shape indices.shape + (D,)."""
    indices = np.asarray(indices, dtype=np.int64)
    out = Tensor(table.data[indices], requires_grad=table.requires_grad, _parents=(table,))
    if out.requires_grad:
        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(table.data)
            np.add.at(full, indices.reshape(-1), g.reshape(-1, table.data.shape[-1]))
            table._accumulate(full)
        out._backward = backward
    return out


def scatter_add_rows(rows: Tensor, indices: np.ndarray, size: int) -> Tensor:
    """Sum rows (E, D) into a (size, D) result at the given indices."""
    indices = np.asarray(indices, dtype=np.int64)
    data = np.zeros((size, rows.data.shape[-1]), dtype=np.float64)
    np.add.at(data, indices, rows.data)
    out = Tensor(data, requires_grad=rows.requires_grad, _parents=(rows,))
    if out.requires_grad:
        def backward(g: np.ndarray) -> None:
            rows._accumulate(g[indices])
        out._backward = backward
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p, requires_grad=x.requires_grad, _parents=(x,))
    if out.requires_grad:
        def backward(g: np.ndarray) -> None:
            inner = (g * p).sum(axis=axis, keepdims=True)
            x._accumulate(p * (g - inner))
        out._backward = backward
    return out


def cross_entropy_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under the
    softmax of ``logits`` (N, V).  Fused for stability."""
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.data.shape[0]
    if n == 0:
        raise ValueError("cross entropy over an empty batch")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=-1))
    nll = logsumexp - shifted[np.arange(n), targets]
    out = Tensor(nll.mean(), requires_grad=logits.requires_grad, _parents=(logits,))
    if out.requires_grad:
        p = np.exp(shifted) / np.exp(shifted).sum(axis=-1, keepdims=True)
        def backward(g: np.ndarray) -> None:
            grad = p.copy()
            grad[np.arange(n), targets] -= 1.0
            logits._accumulate(g * grad / n)
        out._backward = backward
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the trailing axis to zero mean / unit variance, then
    scale and shift.  Fused forward/backward."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gamma.data + beta.data
    req = x.requires_grad or gamma.requires_grad or beta.requires_grad
    out = Tensor(out_data, requires_grad=req, _parents=(x, gamma, beta))
    if out.requires_grad:
        d = x.data.shape[-1]
        def backward(g: np.ndarray) -> None:
            if gamma.requires_grad:
                axes = tuple(range(g.ndim - 1))
                gamma._accumulate((g * xhat).sum(axis=axes))
            if beta.requires_grad:
                axes = tuple(range(g.ndim - 1))
                beta._accumulate(g.sum(axis=axes))
            if x.requires_grad:
                gx = g * gamma.data
                term1 = gx
                term2 = gx.mean(axis=-1, keepdims=True)
                term3 = xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                x._accumulate(inv * (term1 - term2 - term3))
        out._backward = backward
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s, requires_grad=x.requires_grad, _parents=(x,))
    if out.requires_grad:
        def backward(g: np.ndarray) -> None:
            x._accumulate(g * s * (1.0 - s))
        out._backward = backward
    return out


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t, requires_grad=x.requires_grad, _parents=(x,))
    if out.requires_grad:
        def backward(g: np.ndarray) -> None:
            x._accumulate(g * (1.0 - t * t))
        out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(x.data * mask, requires_grad=x.requires_grad, _parents=(x,))
    if out.requires_grad:
        def backward(g: np.ndarray) -> None:
            x._accumulate(g * mask)
        out._backward = backward
    return out


def one_hot(indices: Iterable[int], depth: int) -> np.ndarray:
    """Plain one-hot encoding (no gradient; inputs are categorical)."""
    idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices,
                     dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= depth):
        raise ValueError("one_hot index out of range")
    out = np.zeros(idx.shape + (depth,), dtype=np.float64)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine of the angle between the trailing axes of ``a`` and ``b``."""
    dot = (a * b).sum(axis=-1)
    na = ((a * a).sum(axis=-1) + eps) ** 0.5
    nb = ((b * b).sum(axis=-1) + eps) ** 0.5
    return dot / (na * nb)
