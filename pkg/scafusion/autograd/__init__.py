from scafusion.autograd.tensor import (
    Function,
    Tensor,
    backward,
    default_dtype,
    is_grad_enabled,
    no_grad,
    precision,
)

__all__ = [
    "Function",
    "Tensor",
    "backward",
    "default_dtype",
    "is_grad_enabled",
    "no_grad",
    "precision",
]
