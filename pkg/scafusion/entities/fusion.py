import numpy as np

from scafusion.autograd import Tensor
from scafusion.autograd import functional as F
from scafusion.entities.layers import Conv2d, ConvBlock
from scafusion.entities.module import Module
from scafusion.errors import ShapeError


class ConvFuser(Module):
    """Channel concat of the BEV streams followed by one 3x3 conv block.

    Args:
        in_channels: Channel count per stream, in concat order.
        out_channels: ``C_f``.
        rng: Initialisation generator.
    """

    def __init__(
        self,
        in_channels: tuple[int, ...],
        out_channels: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.in_channels = tuple(in_channels)
        self.block = self.register_module(
            "block", ConvBlock(sum(in_channels), out_channels, rng)
        )

    def forward(self, *streams: Tensor) -> Tensor:
        """Fuse NCHW BEV maps.

        Raises:
            ShapeError: If spatial sizes or stream widths disagree.
        """
        widths = tuple(s.shape[1] for s in streams)
        if widths != self.in_channels:
            raise ShapeError(
                f"fuser expects stream channels (dim 1) {self.in_channels},"
                f" got {list(widths)}"
            )
        spatial = {s.shape[2:] for s in streams}
        if len(spatial) != 1:
            raise ShapeError(
                f"fuser streams differ in spatial size (dims 2,3): {sorted(spatial)}"
            )
        fused = streams[0] if len(streams) == 1 else F.concat(list(streams), axis=1)
        return self.block(fused)


class CoordinatePositionEmbedding(Module):
    """Directional pooled channel weights ``w^h`` (C x H x 1), ``w^w`` (C x 1 x W).

    Args:
        channels: Input channels ``C``.
        rng: Initialisation generator.
        ratio: Reduction ``rho`` of the shared conv.
        zero_init: Zero all convs so both weight maps start at 0.5.
    """

    def __init__(
        self,
        channels: int,
        rng: np.random.Generator,
        ratio: int = 8,
        zero_init: bool = False,
    ):
        super().__init__()
        if ratio < 1:
            raise ValueError(f"reduction ratio has to be at least 1 - not {ratio}")
        mid = max(1, channels // ratio)
        self.shared = self.register_module(
            "shared", Conv2d(channels, mid, 1, rng, zero_init=zero_init)
        )
        self.conv_h = self.register_module(
            "conv_h", Conv2d(mid, channels, 1, rng, zero_init=zero_init)
        )
        self.conv_w = self.register_module(
            "conv_w", Conv2d(mid, channels, 1, rng, zero_init=zero_init)
        )

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        _, _, h, w = x.shape
        z_h = F.reduce_pool(x, 3, "avg")
        z_w = F.reduce_pool(x, 2, "avg").permute(0, 1, 3, 2)
        f_co = F.relu(self.shared(F.concat([z_h, z_w], axis=2)))
        f_h, f_w = F.split(f_co, [h, w], axis=2)
        w_h = F.sigmoid(self.conv_h(f_h))
        w_w = F.sigmoid(self.conv_w(f_w.permute(0, 1, 3, 2)))
        return w_h, w_w


class SectionAttention(Module):
    """Spatial gate from channel-wise avg and max maps: ``1 x H x W`` in (0, 1)."""

    def __init__(self, rng: np.random.Generator, zero_init: bool = False):
        super().__init__()
        self.conv = self.register_module(
            "conv", Conv2d(2, 1, 1, rng, zero_init=zero_init)
        )

    def forward(self, x: Tensor) -> Tensor:
        pooled = F.concat(
            [F.reduce_pool(x, 1, "avg"), F.reduce_pool(x, 1, "max")], axis=1
        )
        return F.sigmoid(self.conv(pooled))


class SectionCoordinateAttention(Module):
    """``y = x * w^h * w^w * w^s`` with the section gate optional.

    Args:
        channels: Input channels.
        rng: Initialisation generator.
        ratio: CPEM reduction ``rho``.
        saem: Whether the spatial section gate is applied.
        zero_init: Zero every attention conv (fixed 1/8 or 1/4 gate).
    """

    def __init__(
        self,
        channels: int,
        rng: np.random.Generator,
        ratio: int = 8,
        saem: bool = True,
        zero_init: bool = False,
    ):
        super().__init__()
        self.cpem = self.register_module(
            "cpem", CoordinatePositionEmbedding(channels, rng, ratio, zero_init)
        )
        self.saem = None
        if saem:
            self.saem = self.register_module("saem", SectionAttention(rng, zero_init))

    def forward(self, x: Tensor) -> Tensor:
        w_h, w_w = self.cpem(x)
        y = x * w_h * w_w
        if self.saem is not None:
            y = y * self.saem(x)
        return y
