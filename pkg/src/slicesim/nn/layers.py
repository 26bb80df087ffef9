"""Layer set built on the tensor engine.

Every layer exposes ``params()`` as an ordered list of (name, Tensor)
pairs so optimizers and checkpoints agree on parameter identity.  All
weights use seeded Xavier-uniform init from a caller-provided numpy
Generator; biases start at zero.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    Tensor,
    concat,
    gather_rows,
    layer_norm,
    matmul,
    relu,
    sigmoid,
    softmax,
    tanh,
)

__all__ = [
    "xavier_uniform",
    "Embedding",
    "Linear",
    "LayerNorm",
    "MultiHeadSelfAttention",
    "FeedForward",
    "TransformerBlock",
    "GRUCell",
    "MLP",
]

Params = list[tuple[str, Tensor]]


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...] | None = None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


def _prefixed(prefix: str, params: Params) -> Params:
    return [(f"{prefix}.{name}", t) for name, t in params]


class Embedding:
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator):
        self.w = Tensor(xavier_uniform(rng, num_embeddings, dim), requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return gather_rows(self.w, ids)

    def params(self) -> Params:
        return [("w", self.w)]


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 init_std: float | None = None):
        if init_std is None:
            w = xavier_uniform(rng, in_dim, out_dim)
        else:
            w = rng.normal(0.0, init_std, size=(in_dim, out_dim))
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.w) + self.b

    def params(self) -> Params:
        return [("w", self.w), ("b", self.b)]


class LayerNorm:
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)

    def params(self) -> Params:
        return [("gamma", self.gamma), ("beta", self.beta)]


class MultiHeadSelfAttention:
    """Bidirectional multi-head self-attention over (B, S, D) inputs.

    ``pad_mask`` is an additive float array broadcastable to
    (B, heads, S, S); masked positions carry a large negative value.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ValueError("dim must divide evenly into heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def _split(self, x: Tensor, b: int, s: int) -> Tensor:
        return x.reshape(b, s, self.heads, self.head_dim).transpose((0, 2, 1, 3))

    def __call__(self, x: Tensor, pad_mask: np.ndarray | None = None) -> Tensor:
        b, s, _ = x.shape
        q = self._split(self.wq(x), b, s)
        k = self._split(self.wk(x), b, s)
        v = self._split(self.wv(x), b, s)
        scores = matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim))
        if pad_mask is not None:
            scores = scores + pad_mask
        attn = softmax(scores, axis=-1)
        mixed = matmul(attn, v)
        merged = mixed.transpose((0, 2, 1, 3)).reshape(b, s, self.dim)
        return self.wo(merged)

    def params(self) -> Params:
        out: Params = []
        for name, layer in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            out.extend(_prefixed(name, layer.params()))
        return out


class FeedForward:
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.l1 = Linear(dim, hidden, rng)
        self.l2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(relu(self.l1(x)))

    def params(self) -> Params:
        return _prefixed("l1", self.l1.params()) + _prefixed("l2", self.l2.params())


class TransformerBlock:
    """Pre-norm block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, dim: int, heads: int, ffn_hidden: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_hidden, rng)

    def __call__(self, x: Tensor, pad_mask: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x), pad_mask)
        x = x + self.ffn(self.ln2(x))
        return x

    def params(self) -> Params:
        return (
            _prefixed("ln1", self.ln1.params())
            + _prefixed("attn", self.attn.params())
            + _prefixed("ln2", self.ln2.params())
            + _prefixed("ffn", self.ffn.params())
        )


class GRUCell:
    """Gated recurrent unit: h' = (1-z)*n + z*h with reset/update gates."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.hidden_dim = hidden_dim
        self.wx = Tensor(xavier_uniform(rng, input_dim, 3 * hidden_dim), requires_grad=True)
        self.wh = Tensor(xavier_uniform(rng, hidden_dim, 3 * hidden_dim), requires_grad=True)
        self.bx = Tensor(np.zeros(3 * hidden_dim), requires_grad=True)
        self.bh = Tensor(np.zeros(3 * hidden_dim), requires_grad=True)

    def __call__(self, h: Tensor, x: Tensor) -> Tensor:
        hd = self.hidden_dim
        gx = matmul(x, self.wx) + self.bx
        gh = matmul(h, self.wh) + self.bh
        r = sigmoid(gx[..., 0:hd] + gh[..., 0:hd])
        z = sigmoid(gx[..., hd : 2 * hd] + gh[..., hd : 2 * hd])
        n = tanh(gx[..., 2 * hd : 3 * hd] + r * gh[..., 2 * hd : 3 * hd])
        return (1.0 - z) * n + z * h

    def params(self) -> Params:
        return [("wx", self.wx), ("wh", self.wh), ("bx", self.bx), ("bh", self.bh)]


class MLP:
    """Two-layer perceptron with relu, the workhorse for graph encoders."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator):
        self.l1 = Linear(in_dim, hidden, rng)
        self.l2 = Linear(hidden, out_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(relu(self.l1(x)))

    def params(self) -> Params:
        return _prefixed("l1", self.l1.params()) + _prefixed("l2", self.l2.params())
