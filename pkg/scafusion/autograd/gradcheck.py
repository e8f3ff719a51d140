from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from scafusion.autograd.tensor import Tensor, backward, no_grad, precision

ScalarFn = Callable[..., Tensor]

DEFAULT_EPS = 1e-3
DEFAULT_TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative error between two gradient arrays.

    Args:
        analytic: Gradient from backpropagation.
        numeric: Gradient from central differences.

    Returns:
        ``max|a - n| / max(max|a|, max|n|, 1e-8)``.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(
        float(np.max(np.abs(analytic), initial=0.0)),
        float(np.max(np.abs(numeric), initial=0.0)),
        1e-8,
    )
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def numerical_gradient(
    fn: ScalarFn, inputs: Sequence[np.ndarray], index: int, eps: float = DEFAULT_EPS
) -> np.ndarray:
    """Central-difference gradient of a scalar function w.r.t. one input, in 64-bit.

    Args:
        fn: Function of tensors returning a scalar tensor.
        inputs: Input arrays.
        index: Which input to differentiate.
        eps: Half step.

    Returns:
        Gradient array shaped like ``inputs[index]``.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    target = arrays[index]
    grad = np.zeros_like(target)
    with precision(np.float64), no_grad():
        for position in np.ndindex(target.shape):
            original = target[position]
            target[position] = original + eps
            upper = fn(*(Tensor(a) for a in arrays)).item()
            target[position] = original - eps
            lower = fn(*(Tensor(a) for a in arrays)).item()
            target[position] = original
            grad[position] = (upper - lower) / (2.0 * eps)
    return grad


def analytic_gradients(fn: ScalarFn, inputs: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Backpropagated gradients of a scalar function w.r.t. every input, in 64-bit."""
    with precision(np.float64):
        tensors = [Tensor(x, requires_grad=True) for x in inputs]
        backward(fn(*tensors))
    return [t.grad if t.grad is not None else np.zeros(t.shape) for t in tensors]


def finite_diff(
    fn: ScalarFn, inputs: Sequence[np.ndarray], index: int, eps: float = DEFAULT_EPS
) -> float:
    """Relative error between analytic and central-difference gradients of one input."""
    analytic = analytic_gradients(fn, inputs)[index]
    return relative_error(analytic, numerical_gradient(fn, inputs, index, eps))


@dataclass(frozen=True)
class GradCheckResult:
    """Outcome of a gradient check over every input of a function.

    Args:
        name: Check label.
        errors: Relative error per input.
        tolerance: Pass threshold.
    """

    name: str
    errors: tuple[float, ...]
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.errors, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def check_gradients(
    fn: ScalarFn,
    inputs: Sequence[np.ndarray],
    name: str = "check",
    eps: float = DEFAULT_EPS,
    tolerance: float = DEFAULT_TOLERANCE,
    wrt: Sequence[int] | None = None,
) -> GradCheckResult:
    """Compare analytic and numerical gradients for the selected inputs.

    Args:
        fn: Function of tensors returning a scalar tensor.
        inputs: Input arrays.
        name: Label carried into the result.
        eps: Central-difference half step.
        tolerance: Relative error threshold.
        wrt: Indices to check; defaults to all.

    Returns:
        Result with one relative error per checked input.
    """
    analytic = analytic_gradients(fn, inputs)
    indices = range(len(inputs)) if wrt is None else wrt
    errors = tuple(
        relative_error(analytic[i], numerical_gradient(fn, inputs, i, eps))
        for i in indices
    )
    return GradCheckResult(name=name, errors=errors, tolerance=tolerance)
