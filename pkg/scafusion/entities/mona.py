import numpy as np

from scafusion.autograd import Tensor
from scafusion.autograd import functional as F
from scafusion.entities.layers import Conv2d, LayerNorm, Linear
from scafusion.entities.module import Module
from scafusion.errors import ShapeError

DEPTHWISE_KERNELS = (3, 5, 7)


class MonaAdapter(Module):
    """Cognitive adapter: scaled norm, bottleneck, multi-scale depthwise filters.

    ``out = x + U(sigmoid(pw(dw(D(s1 * LN(x) + s2 * x)))))`` where ``dw`` averages
    three parallel depthwise convolutions and adds back its input. ``U`` starts at
    zero, so the adapter is the identity at initialisation.

    Args:
        channels: Token width ``C``.
        rng: Initialisation generator.
        ratio: Bottleneck ratio ``r``; the inner width is ``C // r``.
    """

    def __init__(self, channels: int, rng: np.random.Generator, ratio: int = 4):
        super().__init__()
        if ratio < 2:
            raise ValueError(f"bottleneck ratio has to be at least 2 - not {ratio}")
        if channels // ratio < 1:
            raise ValueError(
                f"channels {channels} too small for bottleneck ratio {ratio}"
            )
        inner = channels // ratio
        self.channels = channels
        self.norm = self.register_module("norm", LayerNorm(channels))
        self.s1 = self.register_parameter("s1", np.ones(1))
        self.s2 = self.register_parameter("s2", np.zeros(1))
        self.down = self.register_module("down", Linear(channels, inner, rng))
        self.depthwise = [
            self.register_module(f"dw{k}", Conv2d(inner, inner, k, rng, groups=inner))
            for k in DEPTHWISE_KERNELS
        ]
        self.pointwise = self.register_module("pointwise", Conv2d(inner, inner, 1, rng))
        self.up = self.register_module(
            "up", Linear(inner, channels, rng, zero_init=True)
        )

    def scaled_norm(self, x: Tensor) -> Tensor:
        return self.s1.tensor * self.norm(x) + self.s2.tensor * x

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        """Apply the adapter to ``N x L x C`` tokens laid out on an ``H x W`` grid.

        Raises:
            ShapeError: If the channel extent or token count does not match.
        """
        n, length, channels = x.shape
        h, w = hw
        if channels != self.channels:
            raise ShapeError(
                f"mona expects {self.channels} channels (last dim), got {channels}"
            )
        if length != h * w:
            raise ShapeError(
                f"mona token count (dim 1) {length} does not match grid {h}x{w}"
            )
        reduced = self.down(self.scaled_norm(x))
        inner = reduced.shape[-1]
        feature_map = reduced.reshape(n, h, w, inner).permute(0, 3, 1, 2)
        first, *rest = self.depthwise
        multi_scale = sum((conv(feature_map) for conv in rest), first(feature_map))
        mixed = multi_scale / float(len(self.depthwise)) + feature_map
        gate = F.sigmoid(self.pointwise(mixed))
        tokens = gate.permute(0, 2, 3, 1).reshape(n, length, inner)
        return x + self.up(tokens)
