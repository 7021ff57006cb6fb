from .tensor import (
    PRIMITIVE_OPS,
    DiffcoreError,
    DomainError,
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    concat,
    cos,
    div,
    exp,
    forward_op,
    graph_nodes,
    linear,
    log,
    matmul,
    max_over_window,
    mul,
    posenc,
    power,
    relu,
    reshape,
    sigmoid,
    sin,
    softplus,
    sqrt,
    sub,
    tensor_abs,
    tensor_mean,
    tensor_slice,
    tensor_sum,
)
from .gradcheck import GradCheckReport, gradient_check

__all__ = [
    "PRIMITIVE_OPS", "DiffcoreError", "DomainError", "Tensor", "add",
    "as_tensor", "broadcast_to", "concat", "cos", "div", "exp", "forward_op", "graph_nodes",
    "linear", "log", "matmul", "max_over_window", "mul", "posenc", "power",
    "relu", "reshape", "sigmoid", "sin", "softplus", "sqrt", "sub",
    "tensor_abs", "tensor_mean", "tensor_slice", "tensor_sum",
    "GradCheckReport", "gradient_check",
]
