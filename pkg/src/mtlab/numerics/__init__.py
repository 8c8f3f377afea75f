"""Tensor arithmetic, reverse-mode autodiff, and seeded randomness."""

from .rng import rng_fork, sample_categorical
from .autodiff import (
    Tensor,
    add,
    backward,
    concat,
    cross_entropy,
    default_dtype,
    dropout,
    embedding_lookup,
    gelu,
    layer_norm,
    matmul,
    mean_all,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    set_default_dtype,
    softmax,
    sub,
    tensor,
    transpose,
    tsum,
    using_dtype,
)

__all__ = [
    "Tensor",
    "add",
    "backward",
    "concat",
    "cross_entropy",
    "default_dtype",
    "dropout",
    "embedding_lookup",
    "gelu",
    "layer_norm",
    "matmul",
    "mean_all",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "rng_fork",
    "sample_categorical",
    "scale",
    "set_default_dtype",
    "softmax",
    "sub",
    "tensor",
    "transpose",
    "tsum",
    "using_dtype",
]
