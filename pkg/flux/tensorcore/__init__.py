"""
Minimal dense-tensor numerics with reverse-mode differentiation.
"""

from . import ops
from .gradcheck import grad_check, gradient_errors
from .ops import LAYER_NORM_EPS
from .tensor import (
    DEFAULT_DTYPE,
    Function,
    Tensor,
    as_tensor,
    is_grad_enabled,
    no_grad,
    parameter,
)

__all__ = [
    "ops",
    "grad_check",
    "gradient_errors",
    "LAYER_NORM_EPS",
    "DEFAULT_DTYPE",
    "Function",
    "Tensor",
    "as_tensor",
    "is_grad_enabled",
    "no_grad",
    "parameter",
]
