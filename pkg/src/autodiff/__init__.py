"""Double-precision tensors with a dynamic reverse-mode tape."""

from autodiff import functional
from autodiff.gradcheck import check_gradients, numerical_gradient, relative_error
from autodiff.tensor import Node, Tape, Tensor, active_tape, backward

__all__ = [
    "Node",
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "check_gradients",
    "functional",
    "numerical_gradient",
    "relative_error",
]
