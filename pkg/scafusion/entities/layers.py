"""Building blocks shared by every network component."""

import math

import numpy as np

from scafusion.autograd import Tensor
from scafusion.autograd import functional as F
from scafusion.entities.module import Module


def _uniform(
    rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]
) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Affine map over the last axis.

    Args:
        in_features: Input width.
        out_features: Output width.
        rng: Initialisation generator.
        bias: Whether to add a bias.
        zero_init: Start from all-zero weight and bias.
    """

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
        zero_init: bool = False,
    ):
        super().__init__()
        shape = (out_features, in_features)
        weight = np.zeros(shape) if zero_init else _uniform(rng, in_features, shape)
        self.weight = self.register_parameter("weight", weight)
        self.bias = None
        if bias:
            self.bias = self.register_parameter("bias", np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return F.affine(x, self.weight.tensor, self.bias.tensor if self.bias else None)


class Conv2d(Module):
    """2D convolution with ``same`` padding by default.

    Args:
        in_channels: Input channels.
        out_channels: Output channels.
        kernel_size: Odd kernel edge.
        rng: Initialisation generator.
        stride: Step.
        groups: Channel groups; equal to both channel counts for depthwise.
        bias: Whether to add a bias.
        zero_init: Start from all-zero weight and bias.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        groups: int = 1,
        bias: bool = True,
        zero_init: bool = False,
    ):
        super().__init__()
        shape = (out_channels, in_channels // groups, kernel_size, kernel_size)
        fan_in = shape[1] * kernel_size * kernel_size
        weight = np.zeros(shape) if zero_init else _uniform(rng, fan_in, shape)
        self.weight = self.register_parameter("weight", weight)
        self.bias = None
        if bias:
            self.bias = self.register_parameter("bias", np.zeros(out_channels))
        self.stride = stride
        self.padding = kernel_size // 2
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(
            x,
            self.weight.tensor,
            self.bias.tensor if self.bias else None,
            stride=self.stride,
            padding=self.padding,
            groups=self.groups,
        )


class LayerNorm(Module):
    def __init__(self, features: int, axis: int = -1, eps: float = 1e-5):
        super().__init__()
        self.gamma = self.register_parameter("gamma", np.ones(features))
        self.beta = self.register_parameter("beta", np.zeros(features))
        self.axis = axis
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(
            x, self.gamma.tensor, self.beta.tensor, eps=self.eps, axis=self.axis
        )


class ConvBlock(Module):
    """Convolution, channel LayerNorm, ReLU."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        kernel_size: int = 3,
        stride: int = 1,
    ):
        super().__init__()
        self.conv = self.register_module(
            "conv", Conv2d(in_channels, out_channels, kernel_size, rng, stride=stride)
        )
        self.norm = self.register_module("norm", LayerNorm(out_channels, axis=1))

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.norm(self.conv(x)))


class ResidualBlock(Module):
    """Two 3x3 conv/norm layers with a shortcut.

    A 1x1 projection on the shortcut matches shape changes.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        stride: int = 1,
    ):
        super().__init__()
        self.conv1 = self.register_module(
            "conv1", Conv2d(in_channels, out_channels, 3, rng, stride=stride)
        )
        self.norm1 = self.register_module("norm1", LayerNorm(out_channels, axis=1))
        self.conv2 = self.register_module(
            "conv2", Conv2d(out_channels, out_channels, 3, rng)
        )
        self.norm2 = self.register_module("norm2", LayerNorm(out_channels, axis=1))
        self.shortcut = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = self.register_module(
                "shortcut", Conv2d(in_channels, out_channels, 1, rng, stride=stride)
            )

    def forward(self, x: Tensor) -> Tensor:
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        identity = x if self.shortcut is None else self.shortcut(x)
        return F.relu(y + identity)
