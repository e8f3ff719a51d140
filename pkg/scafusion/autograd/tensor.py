import logging
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Iterator, Sequence, Union

import numpy as np

from scafusion.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]

_default_dtype: ContextVar[np.dtype] = ContextVar(
    "default_dtype", default=np.dtype(np.float32)
)
_grad_enabled: ContextVar[bool] = ContextVar("grad_enabled", default=True)


def default_dtype() -> np.dtype:
    """Get the floating dtype used for newly created tensors in this context."""
    return _default_dtype.get()


@contextmanager
def precision(dtype: Any) -> Iterator[None]:
    """Switch the default tensor dtype for the duration of the block.

    Gradient checks run under ``precision(np.float64)``; regular compute stays 32-bit.

    Args:
        dtype: Any numpy floating dtype specifier.
    """
    token = _default_dtype.set(np.dtype(dtype))
    try:
        yield
    finally:
        _default_dtype.reset(token)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording for the duration of the block."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    """Check whether operations currently record a backward graph."""
    return _grad_enabled.get()


class Function:
    """Base class for differentiable operations.

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning one
    gradient (or ``None``) per input.

    Args:
        *inputs: Input tensors of this node.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs

    @property
    def name(self) -> str:
        """Get the node name used in diagnostics."""
        return type(self).__name__

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        """Compute the node output.

        Args:
            *arrays: Data of the input tensors.
            **kwargs: Non-differentiable operation attributes.

        Returns:
            Output array.

        Raises:
            NotImplementedError: Must be implemented by subclasses.
        """
        raise NotImplementedError()

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        """Map the output gradient to input gradients.

        Args:
            grad: Gradient of the loss w.r.t. the node output.

        Returns:
            One gradient per input, ``None`` for inputs that receive none.

        Raises:
            NotImplementedError: Must be implemented by subclasses.
        """
        raise NotImplementedError()

    @classmethod
    def apply(cls, *inputs: Union["Tensor", ArrayLike], **kwargs: Any) -> "Tensor":
        """Run the forward pass and wrap the result into a graph node.

        Non-tensor inputs become constants with the dtype of the first tensor input.

        Args:
            *inputs: Tensors or constants.
            **kwargs: Operation attributes passed to ``forward``.

        Returns:
            Output tensor.

        Raises:
            NonFiniteError: If the output holds NaN or Inf.
        """
        like = next((x for x in inputs if isinstance(x, Tensor)), None)
        dtype = like.dtype if like is not None else default_dtype()
        tensors = tuple(
            x if isinstance(x, Tensor) else Tensor(x, dtype=dtype) for x in inputs
        )
        func = cls(*tensors)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = func.forward(*(t.data for t in tensors), **kwargs)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(func.name)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor._from_op(out, func if requires_grad else None, requires_grad)


class Tensor:
    """Dense real array with optional gradient tracking.

    Tensors are immutable: the underlying array is read-only and every operation
    produces a new tensor. Leaf tensors with ``requires_grad`` receive ``grad``
    after ``backward``.

    Args:
        data: Array-like payload, copied on construction.
        requires_grad: Whether gradients flow to this tensor.
        dtype: Optional dtype; defaults to the context dtype.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype: Any = None):
        array = np.array(data, dtype=default_dtype() if dtype is None else dtype)
        array.flags.writeable = False
        self.__data = array
        self.__requires_grad = requires_grad
        self.__creator: Function | None = None
        self.__grad: np.ndarray | None = None

    @classmethod
    def _from_op(
        cls, array: np.ndarray, creator: Function | None, requires_grad: bool
    ) -> "Tensor":
        tensor = cls.__new__(cls)
        array = np.asarray(array)
        array.flags.writeable = False
        tensor.__data = array
        tensor.__requires_grad = requires_grad
        tensor.__creator = creator
        tensor.__grad = None
        return tensor

    @property
    def data(self) -> np.ndarray:
        """Get the read-only payload."""
        return self.__data

    @property
    def shape(self) -> tuple[int, ...]:
        """Get the payload shape."""
        return self.__data.shape

    @property
    def ndim(self) -> int:
        """Get the number of axes."""
        return self.__data.ndim

    @property
    def size(self) -> int:
        """Get the number of elements."""
        return self.__data.size

    @property
    def dtype(self) -> np.dtype:
        """Get the floating-point precision of the payload."""
        return self.__data.dtype

    @property
    def requires_grad(self) -> bool:
        """Get whether backward accumulates a gradient for this tensor."""
        return self.__requires_grad

    @property
    def creator(self) -> Function | None:
        """Get the node that produced this tensor, ``None`` for leaves."""
        return self.__creator

    @property
    def is_leaf(self) -> bool:
        """Get whether the tensor was created directly rather than by a primitive."""
        return self.__creator is None

    @property
    def grad(self) -> np.ndarray | None:
        """Get the accumulated gradient of a leaf tensor."""
        return self.__grad

    def _accumulate_grad(self, grad: np.ndarray) -> None:
        if self.__grad is None:
            self.__grad = np.array(grad, dtype=self.dtype)
        else:
            self.__grad = self.__grad + grad

    def zero_grad(self) -> None:
        """Drop the accumulated gradient."""
        self.__grad = None

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the payload."""
        return np.array(self.__data)

    def item(self) -> float:
        """Return the single element as a Python float.

        Raises:
            ShapeError: If the tensor holds more than one element.
        """
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.__data.reshape(()))

    def detach(self) -> "Tensor":
        """Return a leaf sharing the payload, cut from the graph."""
        return Tensor._from_op(self.__data, None, False)

    def astype(self, dtype: Any, requires_grad: bool | None = None) -> "Tensor":
        """Return a leaf copy in another dtype."""
        flag = self.__requires_grad if requires_grad is None else requires_grad
        return Tensor(self.__data, requires_grad=flag, dtype=dtype)

    def backward(self) -> dict["Tensor", np.ndarray]:
        """Backpropagate from this scalar tensor; see :func:`backward`."""
        return backward(self)

    def __add__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.add(other, self)

    def __sub__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.sub(other, self)

    def __mul__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.mul(other, self)

    def __truediv__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.div(other, self)

    def __neg__(self) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from scafusion.autograd import functional as F

        return F.matmul(self, other)

    def __pow__(self, exponent: float) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.power(self, exponent)

    def sum(
        self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False
    ) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(
        self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False
    ) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        from scafusion.autograd import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def permute(self, *axes: int) -> "Tensor":
        from scafusion.autograd import functional as F

        return F.permute(self, axes)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.__requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in visited:
            continue
        if expanded:
            visited.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        if node.creator is not None:
            for parent in node.creator.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode differentiation of a scalar loss.

    Every leaf tensor with ``requires_grad`` reachable from ``loss`` accumulates its
    gradient; leaves without the flag (frozen parameters, constants) are never touched.

    Args:
        loss: Scalar tensor.

    Returns:
        Mapping from leaf tensor to its gradient.

    Raises:
        ShapeError: If ``loss`` is not scalar.
        NonFiniteError: If a gradient turns NaN/Inf; names the producing node.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        creator = node.creator
        if creator is None:
            node._accumulate_grad(grad)
            leaves[node] = node.grad
            continue
        input_grads = creator.backward(grad)
        for tensor, input_grad in zip(creator.inputs, input_grads):
            if input_grad is None or not tensor.requires_grad:
                continue
            if input_grad.shape != tensor.shape:
                raise ShapeError(
                    f"{creator.name}.backward produced gradient of shape "
                    f"{input_grad.shape} for input of shape {tensor.shape}"
                )
            if not np.all(np.isfinite(input_grad)):
                raise NonFiniteError(f"{creator.name}.backward")
            previous = grads.get(id(tensor))
            if previous is not None:
                input_grad = previous + input_grad
            grads[id(tensor)] = input_grad
    return leaves
