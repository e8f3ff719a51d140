"""Differentiable primitives.

Every model in the package composes from this closed set: elementwise arithmetic
and activations, reductions, affine/matmul, convolution, layer normalisation,
softmax, bilinear upsampling and scatter-add.
"""

import math
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from scafusion.autograd.tensor import ArrayLike, Function, Tensor
from scafusion.errors import ShapeError

SENTINEL_DROP = -1

Operand = Union[Tensor, ArrayLike]
Axes = Union[int, tuple[int, ...], None]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axes(axis: Axes, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    if not axes:
        raise ShapeError("reduction needs at least one axis")
    normalized = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for ndim {ndim}")
        normalized.append(a % ndim)
    return tuple(sorted(set(normalized)))


class Add(Function):
    """Elementwise sum with broadcasting."""

    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x + y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.inputs
        return _unbroadcast(grad, x.shape), _unbroadcast(grad, y.shape)


class Sub(Function):
    """Elementwise difference with broadcasting."""

    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x - y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.inputs
        return _unbroadcast(grad, x.shape), _unbroadcast(-grad, y.shape)


class Mul(Function):
    """Elementwise product with broadcasting."""

    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x * y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.inputs
        return (
            _unbroadcast(grad * y.data, x.shape),
            _unbroadcast(grad * x.data, y.shape),
        )


class Div(Function):
    """Elementwise quotient with broadcasting."""

    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x / y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.inputs
        return (
            _unbroadcast(grad / y.data, x.shape),
            _unbroadcast(-grad * x.data / (y.data * y.data), y.shape),
        )


class Neg(Function):
    """Negation."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        return -x

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (-grad,)


class Exp(Function):
    """Elementwise exponential."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = np.exp(x)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.out,)


class Log(Function):
    """Natural logarithm of positive inputs."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.log(x)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad / self.inputs[0].data,)


class Power(Function):
    """Elementwise power by a constant exponent."""

    def forward(self, x: np.ndarray, exponent: float) -> np.ndarray:
        self.exponent = exponent
        return np.power(x, exponent)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        x = self.inputs[0].data
        return (grad * self.exponent * np.power(x, self.exponent - 1),)


class Abs(Function):
    """Absolute value; the gradient at zero is zero."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.abs(x)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * np.sign(self.inputs[0].data),)


class Clamp(Function):
    """Clip into ``[low, high]``; no gradient outside the range."""

    def forward(self, x: np.ndarray, low: float, high: float) -> np.ndarray:
        self.mask = (x >= low) & (x <= high)
        return np.clip(x, low, high)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


class Sigmoid(Function):
    """Logistic function."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = expit(x)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.out * (1.0 - self.out),)


class ReLU(Function):
    """Rectifier; the gradient at zero is zero."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return x * self.mask

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


class GELU(Function):
    """Exact GELU, ``x * Phi(x)``."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
        return x * self.cdf

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        x = self.inputs[0].data
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        return (grad * (self.cdf + x * pdf),)


class Softmax(Function):
    """Softmax along one axis."""

    def forward(self, x: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        shifted = np.exp(x - x.max(axis=axis, keepdims=True))
        self.out = shifted / shifted.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        inner = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


class Sum(Function):
    """Sum over a set of axes."""

    def forward(
        self, x: np.ndarray, axes: tuple[int, ...], keepdims: bool
    ) -> np.ndarray:
        self.axes, self.keepdims = axes, keepdims
        return x.sum(axis=axes, keepdims=keepdims)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        shape = self.inputs[0].shape
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad, shape).copy(),)


class Mean(Sum):
    """Mean over a set of axes."""

    def forward(
        self, x: np.ndarray, axes: tuple[int, ...], keepdims: bool
    ) -> np.ndarray:
        self.count = int(np.prod([x.shape[a] for a in axes]))
        return super().forward(x, axes, keepdims) / self.count

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        (full,) = super().backward(grad)
        return (full / self.count,)


class Max(Function):
    """Maximum over a set of axes; ties send the gradient to the lowest flat index."""

    def forward(
        self, x: np.ndarray, axes: tuple[int, ...], keepdims: bool
    ) -> np.ndarray:
        kept = [a for a in range(x.ndim) if a not in axes]
        self.perm = kept + list(axes)
        moved = x.transpose(self.perm)
        self.moved_shape = moved.shape
        flat = moved.reshape(moved.shape[: len(kept)] + (-1,))
        self.winner = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, self.winner[..., None], axis=-1)[..., 0]
        self.keep_shape = tuple(1 if a in axes else n for a, n in enumerate(x.shape))
        return out.reshape(self.keep_shape) if keepdims else out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        reduced = int(np.prod(self.moved_shape[self.winner.ndim :]))
        flat = np.zeros(self.winner.shape + (reduced,), dtype=grad.dtype)
        values = grad.reshape(self.winner.shape)[..., None]
        np.put_along_axis(flat, self.winner[..., None], values, axis=-1)
        moved = flat.reshape(self.moved_shape)
        return (moved.transpose(np.argsort(self.perm)),)


class Matmul(Function):
    """Matrix product over the last two axes; batch axes have to match."""

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.matmul(a, b)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.inputs
        return (
            np.matmul(grad, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), grad),
        )


class Affine(Function):
    """``x @ weight.T + bias`` over the last axis of ``x``."""

    def forward(
        self, x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None
    ) -> np.ndarray:
        out = np.matmul(x, weight.T)
        return out if bias is None else out + bias

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        x, weight = self.inputs[0].data, self.inputs[1].data
        flat_grad = grad.reshape(-1, weight.shape[0])
        grads = [np.matmul(grad, weight), flat_grad.T @ x.reshape(-1, weight.shape[1])]
        if len(self.inputs) == 3:
            grads.append(flat_grad.sum(axis=0))
        return tuple(grads)


class Reshape(Function):
    """Reshape to a new shape of the same size."""

    def forward(self, x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        return x.reshape(shape)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(self.inputs[0].shape),)


class Permute(Function):
    """Axis transpose."""

    def forward(self, x: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
        self.axes = axes
        return np.ascontiguousarray(x.transpose(axes))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.transpose(np.argsort(self.axes)),)


class Concat(Function):
    """Join along an existing axis."""

    def forward(self, *arrays: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, ...]:
        return tuple(np.split(grad, self.splits, axis=self.axis))


class Slice(Function):
    """Contiguous ``start:stop`` range along one axis."""

    def forward(self, x: np.ndarray, start: int, stop: int, axis: int) -> np.ndarray:
        self.index = tuple(
            slice(start, stop) if a == axis else slice(None) for a in range(x.ndim)
        )
        return x[self.index]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(self.inputs[0].shape, dtype=grad.dtype)
        full[self.index] = grad
        return (full,)


def _conv_dense(windows: np.ndarray, weight: np.ndarray) -> np.ndarray:
    # windows (n, c, ho, wo, k, k), weight (o, c, k, k) -> (n, o, ho, wo)
    out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))
    return out.transpose(0, 3, 1, 2)


class Conv2d(Function):
    """Grouped 2D cross-correlation via strided windows."""

    def forward(
        self,
        x: np.ndarray,
        weight: np.ndarray,
        bias: np.ndarray | None = None,
        *,
        stride: int,
        padding: int,
        groups: int,
    ) -> np.ndarray:
        n, c, h, w = x.shape
        o, cg, k, _ = weight.shape
        self.stride, self.padding, self.groups = stride, padding, groups
        pad = (padding, padding)
        padded = np.pad(x, ((0, 0), (0, 0), pad, pad)) if padding else x
        self.padded_shape = padded.shape
        ho = (h + 2 * padding - k) // stride + 1
        wo = (w + 2 * padding - k) // stride + 1
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))
        windows = windows[:, :, ::stride, ::stride][:, :, :ho, :wo]
        self.windows = windows
        self.depthwise = groups == c and cg == 1 and o == c
        if self.depthwise:
            out = np.einsum("nchwij,cij->nchw", windows, weight[:, 0], optimize=True)
        elif groups == 1:
            out = _conv_dense(windows, weight)
        else:
            og = o // groups
            out = np.concatenate(
                [
                    _conv_dense(
                        windows[:, g * cg : (g + 1) * cg], weight[g * og : (g + 1) * og]
                    )
                    for g in range(groups)
                ],
                axis=1,
            )
        if bias is not None:
            out = out + bias.reshape(1, o, 1, 1)
        return out

    def _col2im(self, columns: np.ndarray) -> np.ndarray:
        # columns (n, c, ho, wo, k, k) -> input-shaped gradient
        n, c, ho, wo, k, _ = columns.shape
        s, p = self.stride, self.padding
        padded = np.zeros(self.padded_shape, dtype=columns.dtype)
        for i in range(k):
            for j in range(k):
                rows = slice(i, i + s * (ho - 1) + 1, s)
                cols = slice(j, j + s * (wo - 1) + 1, s)
                padded[:, :, rows, cols] += columns[..., i, j]
        if p:
            padded = padded[:, :, p:-p, p:-p]
        return padded

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        weight = self.inputs[1].data
        o, cg, k, _ = weight.shape
        windows = self.windows
        if self.depthwise:
            grad_weight = np.einsum("nchw,nchwij->cij", grad, windows, optimize=True)
            grad_weight = grad_weight[:, None]
            columns = np.einsum("nchw,cij->nchwij", grad, weight[:, 0], optimize=True)
        elif self.groups == 1:
            grad_weight = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
            columns = np.tensordot(grad, weight, axes=([1], [0]))
            columns = columns.transpose(0, 3, 1, 2, 4, 5)
        else:
            og = o // self.groups
            grad_weight = np.empty_like(weight)
            parts = []
            for g in range(self.groups):
                g_out = grad[:, g * og : (g + 1) * og]
                g_win = windows[:, g * cg : (g + 1) * cg]
                g_w = weight[g * og : (g + 1) * og]
                grad_weight[g * og : (g + 1) * og] = np.tensordot(
                    g_out, g_win, axes=([0, 2, 3], [0, 2, 3])
                )
                part = np.tensordot(g_out, g_w, axes=([1], [0]))
                parts.append(part.transpose(0, 3, 1, 2, 4, 5))
            columns = np.concatenate(parts, axis=1)
        grads: list[np.ndarray | None] = [
            self._col2im(columns),
            grad_weight.astype(weight.dtype),
        ]
        if len(self.inputs) == 3:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)


class LayerNorm(Function):
    """Normalisation over one axis followed by a per-channel affine."""

    def forward(
        self,
        x: np.ndarray,
        gamma: np.ndarray,
        beta: np.ndarray,
        *,
        axis: int,
        eps: float,
    ) -> np.ndarray:
        self.axis = axis
        self.broadcast = tuple(x.shape[a] if a == axis else 1 for a in range(x.ndim))
        mean = x.mean(axis=axis, keepdims=True)
        var = x.var(axis=axis, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.normalized = (x - mean) * self.inv_std
        scale, shift = gamma.reshape(self.broadcast), beta.reshape(self.broadcast)
        return self.normalized * scale + shift

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        gamma = self.inputs[1].data
        other = tuple(a for a in range(grad.ndim) if a != self.axis)
        grad_norm = grad * gamma.reshape(self.broadcast)
        projection = (grad_norm * self.normalized).mean(axis=self.axis, keepdims=True)
        grad_x = self.inv_std * (
            grad_norm
            - grad_norm.mean(axis=self.axis, keepdims=True)
            - self.normalized * projection
        )
        grad_gamma = (grad * self.normalized).sum(axis=other)
        grad_beta = grad.sum(axis=other)
        return grad_x, grad_gamma, grad_beta


def _upsample_matrix(n: int, dtype: np.dtype) -> np.ndarray:
    matrix = np.zeros((2 * n, n), dtype=dtype)
    for out_index in range(2 * n):
        source = max((out_index + 0.5) / 2.0 - 0.5, 0.0)
        low = int(math.floor(source))
        high = min(low + 1, n - 1)
        frac = source - low
        matrix[out_index, low] += 1.0 - frac
        matrix[out_index, high] += frac
    return matrix


class BilinearUpsample2x(Function):
    """Separable bilinear x2 upsampling, align-corners=false."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.rows = _upsample_matrix(x.shape[2], x.dtype)
        self.cols = _upsample_matrix(x.shape[3], x.dtype)
        return np.matmul(np.matmul(self.rows, x), self.cols.T)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.matmul(np.matmul(self.rows.T, grad), self.cols),)


class ScatterAdd(Function):
    """Sum rows of an ``N x C`` matrix into the cells of a ``C x H x W`` grid."""

    def forward(
        self, values: np.ndarray, *, index: np.ndarray, grid: tuple[int, int]
    ) -> np.ndarray:
        n_cells = grid[0] * grid[1]
        self.keep = index != SENTINEL_DROP
        self.index = index
        kept_index = index[self.keep]
        kept_values = values[self.keep].astype(np.float64)
        out = np.zeros((0, n_cells))
        if values.shape[1]:
            out = np.stack(
                [
                    np.bincount(
                        kept_index, weights=kept_values[:, c], minlength=n_cells
                    )
                    for c in range(values.shape[1])
                ]
            )
        return out.reshape(values.shape[1], grid[0], grid[1]).astype(values.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        flat = grad.reshape(grad.shape[0], -1)
        out = np.zeros(self.inputs[0].shape, dtype=grad.dtype)
        out[self.keep] = flat[:, self.index[self.keep]].T
        return (out,)


def add(x: Operand, y: Operand) -> Tensor:
    return Add.apply(x, y)


def sub(x: Operand, y: Operand) -> Tensor:
    return Sub.apply(x, y)


def mul(x: Operand, y: Operand) -> Tensor:
    return Mul.apply(x, y)


def div(x: Operand, y: Operand) -> Tensor:
    return Div.apply(x, y)


def neg(x: Tensor) -> Tensor:
    return Neg.apply(x)


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


def log(x: Tensor) -> Tensor:
    """Natural logarithm; non-positive inputs raise ``NonFiniteError`` naming Log."""
    return Log.apply(x)


def power(x: Tensor, exponent: float) -> Tensor:
    return Power.apply(x, exponent=float(exponent))


def absolute(x: Tensor) -> Tensor:
    return Abs.apply(x)


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    return Clamp.apply(x, low=low, high=high)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def gelu(x: Tensor) -> Tensor:
    return GELU.apply(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis % x.ndim)


def reduce_sum(x: Tensor, axis: Axes = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(x, axes=_normalize_axes(axis, x.ndim), keepdims=keepdims)


def reduce_mean(x: Tensor, axis: Axes = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axes=_normalize_axes(axis, x.ndim), keepdims=keepdims)


def reduce_max(x: Tensor, axis: Axes = None, keepdims: bool = False) -> Tensor:
    return Max.apply(x, axes=_normalize_axes(axis, x.ndim), keepdims=keepdims)


def reduce_pool(x: Tensor, axes: Axes, mode: str = "avg") -> Tensor:
    """Average or max pooling over a set of axes, keeping them with extent 1.

    Args:
        x: Input tensor.
        axes: Axis or axes to reduce; must be nonempty.
        mode: ``"avg"`` or ``"max"``.

    Returns:
        Tensor with reduced axes of extent 1.

    Raises:
        ShapeError: If the axis set is empty or out of range.
        ValueError: If the mode is unknown.
    """
    if axes is None:
        raise ShapeError("reduce_pool needs an explicit nonempty axis set")
    if mode == "avg":
        return reduce_mean(x, axes, keepdims=True)
    if mode == "max":
        return reduce_max(x, axes, keepdims=True)
    raise ValueError(f"pooling mode has to be 'avg' or 'max' - not {mode!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes; leading axes must match."""
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimension mismatch: {a.shape[-1]} vs {b.shape[-2]}"
        )
    return Matmul.apply(a, b)


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ weight.T + bias``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"affine input feature dimension (last) = {x.shape[-1]}"
            f" does not match weight {weight.shape}"
        )
    if bias is None:
        return Affine.apply(x, weight)
    if bias.shape != (weight.shape[0],):
        raise ShapeError(
            f"affine bias shape {bias.shape} does not match"
            f" out features {weight.shape[0]}"
        )
    return Affine.apply(x, weight, bias)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        np.empty(x.shape, dtype=np.bool_).reshape(shape)
    except ValueError as error:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}") from error
    return Reshape.apply(x, shape=shape)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permutation {axes} invalid for ndim {x.ndim}")
    return Permute.apply(x, axes=axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    first = tensors[0]
    axis = axis % first.ndim
    for t in tensors[1:]:
        for a in range(first.ndim):
            if a != axis and t.shape[a] != first.shape[a]:
                raise ShapeError(
                    f"concat extents differ on dimension {a}:"
                    f" {first.shape} vs {t.shape}"
                )
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, shape))
    return concat(expanded, axis=axis)


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    axis = axis % x.ndim
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(
            f"split sizes {list(sizes)} do not cover dimension {axis}"
            f" of extent {x.shape[axis]}"
        )
    parts, start = [], 0
    for size in sizes:
        parts.append(Slice.apply(x, start=start, stop=start + size, axis=axis))
        start += size
    return parts


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Grouped 2D cross-correlation on NCHW input.

    Output spatial size is ``floor((H + 2p - k) / s) + 1``.

    Raises:
        ShapeError: If ranks, channel counts, group divisibility or kernel size are
            invalid; the message names the offending dimension.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NCHW, got ndim={x.ndim}")
    if weight.ndim != 4:
        raise ShapeError(
            f"conv2d weight must be (out, in/groups, k, k), got ndim={weight.ndim}"
        )
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(
            f"conv2d kernel (dims 2,3) must be square and odd, got {kh}x{kw}"
        )
    if groups < 1 or c % groups or o % groups:
        raise ShapeError(
            f"conv2d groups={groups} must divide input channels (dim 1)={c}"
            f" and out channels={o}"
        )
    if cg * groups != c:
        raise ShapeError(
            f"conv2d input channels (dim 1)={c} do not match"
            f" weight in-channels {cg} x groups {groups}"
        )
    if bias is not None and bias.shape != (o,):
        raise ShapeError(
            f"conv2d bias shape {bias.shape} does not match out channels {o}"
        )
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d input spatial size {h}x{w} too small for kernel {kh}")
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Conv2d.apply(*inputs, stride=stride, padding=padding, groups=groups)


def layer_norm(
    x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, axis: int = -1
) -> Tensor:
    """Zero-mean unit-variance normalisation over ``axis``, then ``gamma``/``beta``."""
    axis = axis % x.ndim
    if gamma.shape != (x.shape[axis],) or beta.shape != (x.shape[axis],):
        raise ShapeError(
            f"layer_norm gamma/beta {gamma.shape}/{beta.shape} do not match"
            f" normalized extent {x.shape[axis]}"
        )
    return LayerNorm.apply(x, gamma, beta, axis=axis, eps=eps)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"bilinear_upsample2x input must be NCHW, got ndim={x.ndim}")
    return BilinearUpsample2x.apply(x)


def scatter_add(values: Tensor, cell_index: ArrayLike, grid: tuple[int, int]) -> Tensor:
    """Accumulate rows of ``values`` into a ``C x H x W`` grid.

    Args:
        values: ``N x C`` tensor.
        cell_index: ``N`` flat cell indices, or ``SENTINEL_DROP`` for rows to ignore.
        grid: ``(H, W)``.

    Returns:
        ``C x H x W`` tensor; each cell holds the sum of the rows mapped to it.

    Raises:
        ShapeError: If ``values`` is not 2D, lengths differ, or a non-sentinel index
            is out of range.
    """
    index = np.asarray(cell_index, dtype=np.int64).reshape(-1)
    if values.ndim != 2:
        raise ShapeError(f"scatter_add values must be N x C, got shape {values.shape}")
    if index.shape[0] != values.shape[0]:
        raise ShapeError(
            f"scatter_add index length {index.shape[0]} does not match"
            f" rows {values.shape[0]}"
        )
    n_cells = int(grid[0]) * int(grid[1])
    bad = (index != SENTINEL_DROP) & ((index < 0) | (index >= n_cells))
    if np.any(bad):
        raise ShapeError(
            f"scatter_add index {int(index[bad][0])} outside grid of {n_cells} cells"
        )
    return ScatterAdd.apply(values, index=index, grid=(int(grid[0]), int(grid[1])))
