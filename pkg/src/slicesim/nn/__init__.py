"""Minimal neural-network substrate: autodiff tensors, layers,
optimizers, gradient checking and checkpoint IO."""

from .tensor import (
    Tensor,
    concat,
    cosine_similarity,
    cross_entropy_logits,
    gather_rows,
    layer_norm,
    matmul,
    no_grad,
    one_hot,
    relu,
    scatter_add_rows,
    sigmoid,
    softmax,
    tanh,
    tensor,
)
from .layers import (
    Embedding,
    FeedForward,
    GRUCell,
    LayerNorm,
    Linear,
    MLP,
    MultiHeadSelfAttention,
    TransformerBlock,
    xavier_uniform,
)
from .optim import SGD, Adam, zero_grads
from .gradcheck import grad_check
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "tensor", "no_grad", "matmul", "concat", "gather_rows",
    "scatter_add_rows", "softmax", "cross_entropy_logits", "layer_norm",
    "sigmoid", "tanh", "relu", "one_hot", "cosine_similarity",
    "Embedding", "Linear", "LayerNorm", "MultiHeadSelfAttention",
    "FeedForward", "TransformerBlock", "GRUCell", "MLP", "xavier_uniform",
    "SGD", "Adam", "zero_grads", "grad_check", "save_checkpoint",
    "load_checkpoint",
]
