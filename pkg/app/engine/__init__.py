from app.engine.tensor import (
    Tensor,
    apply,
    argmax,
    clamp_min,
    conv2d,
    default_dtype,
    exp,
    l2_normalize,
    log,
    log_softmax,
    relu,
    softmax,
    softplus,
    sqrt,
    square,
    take,
    take_rows,
)
from app.engine.graph import Graph, backward, forward_eval
from app.engine.gradcheck import finite_difference_check

__all__ = [
    "Tensor",
    "Graph",
    "apply",
    "argmax",
    "backward",
    "clamp_min",
    "conv2d",
    "default_dtype",
    "exp",
    "finite_difference_check",
    "forward_eval",
    "l2_normalize",
    "log",
    "log_softmax",
    "relu",
    "softmax",
    "softplus",
    "sqrt",
    "square",
    "take",
    "take_rows",
]
