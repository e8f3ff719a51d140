from dataclasses import dataclass

import numpy as np

from scafusion.autograd import Tensor
from scafusion.autograd import functional as F
from scafusion.entities.layers import Conv2d, ConvBlock, ResidualBlock
from scafusion.entities.module import Module
from scafusion.errors import ShapeError

HEATMAP_INIT_BIAS = -2.19
REGRESSION_FIELDS = {"offset": 2, "height": 1, "dim": 3, "rot": 2}


@dataclass(frozen=True)
class HeadOutput:
    """Dense per-cell predictions, each ``N x k x H x W``.

    Attributes:
        cls: Class logits, ``K`` channels.
        offset: Centre offset in cell fractions (x, y).
        height: Centre z in meters.
        dim: Log of length, width, height.
        rot: Yaw as (sin, cos).
    """

    cls: Tensor
    offset: Tensor
    height: Tensor
    dim: Tensor
    rot: Tensor

    def fields(self) -> dict[str, Tensor]:
        return {
            "cls": self.cls,
            "offset": self.offset,
            "height": self.height,
            "dim": self.dim,
            "rot": self.rot,
        }

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.cls.shape[2], self.cls.shape[3]


class CenterHead(Module):
    """Shared 1x1 conv to ``C_ctr`` then one two-layer 1x1 branch per output field.

    Args:
        in_channels: Input map channels.
        num_classes: ``K``.
        ctr_channels: ``C_ctr``.
        rng: Initialisation generator.
    """

    def __init__(
        self,
        in_channels: int,
        num_classes: int,
        ctr_channels: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.shared = self.register_module(
            "shared", Conv2d(in_channels, ctr_channels, 1, rng)
        )
        sizes = {"cls": num_classes, **REGRESSION_FIELDS}
        self.branches: dict[str, tuple[Conv2d, Conv2d]] = {}
        for field, size in sizes.items():
            branch = Module()
            hidden = branch.register_module(
                "hidden", Conv2d(ctr_channels, ctr_channels, 1, rng)
            )
            out = branch.register_module("out", Conv2d(ctr_channels, size, 1, rng))
            self.register_module(field, branch)
            self.branches[field] = (hidden, out)
        cls_out = self.branches["cls"][1]
        cls_out.bias.assign(np.full(cls_out.bias.shape, HEATMAP_INIT_BIAS))

    def forward(self, x: Tensor) -> HeadOutput:
        shared = F.relu(self.shared(x))
        outputs = {
            field: out(F.relu(hidden(shared)))
            for field, (hidden, out) in self.branches.items()
        }
        return HeadOutput(**outputs)


class CameraAuxBranch(Module):
    """Train-only residual stages plus an FPN-style merge over camera BEV features.

    stage1 -> ``C_aux/2`` at H/2, stage2 -> ``C_aux`` at H/4 and stage3 ->
    ``2 C_aux`` at H/4. ``up(stage3)`` is concatenated with stage1, reduced to
    ``C_aux`` and upsampled to H.

    Args:
        in_channels: ``C_CE``.
        aux_channels: ``C_aux`` (even).
        num_classes: ``K``.
        ctr_channels: ``C_ctr`` of the aux head.
        rng: Initialisation generator.
    """

    def __init__(
        self,
        in_channels: int,
        aux_channels: int,
        num_classes: int,
        ctr_channels: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        if aux_channels < 2 or aux_channels % 2:
            raise ValueError(
                f"C_aux has to be a positive even number - not {aux_channels}"
            )
        half, full, double = aux_channels // 2, aux_channels, 2 * aux_channels
        specs = {
            "stage1": (in_channels, half, 2),
            "stage2": (half, full, 2),
            "stage3": (full, double, 1),
        }
        self.stages = []
        for name, (c_in, c_out, stride) in specs.items():
            stage = Module()
            first = stage.register_module(
                "block0", ResidualBlock(c_in, c_out, rng, stride=stride)
            )
            second = stage.register_module("block1", ResidualBlock(c_out, c_out, rng))
            self.register_module(name, stage)
            self.stages.append((first, second))
        self.merge = self.register_module("merge", ConvBlock(double + half, full, rng))
        self.head = self.register_module(
            "head", CenterHead(full, num_classes, ctr_channels, rng)
        )

    def stage_features(self, x_ce: Tensor) -> list[Tensor]:
        """Outputs of the three residual stages.

        Raises:
            ShapeError: If H or W is not divisible by 4.
        """
        h, w = x_ce.shape[2:]
        if h % 4 or w % 4:
            raise ShapeError(
                f"aux branch BEV height/width (dims 2,3) {h}x{w}"
                " have to be divisible by 4"
            )
        outputs = []
        y = x_ce
        for first, second in self.stages:
            y = second(first(y))
            outputs.append(y)
        return outputs

    def features(self, x_ce: Tensor) -> Tensor:
        """``x_aux``: ``N x C_aux x H x W``."""
        x1, _, x3 = self.stage_features(x_ce)
        merged = self.merge(F.concat([F.bilinear_upsample2x(x3), x1], axis=1))
        return F.bilinear_upsample2x(merged)

    def forward(self, x_ce: Tensor) -> HeadOutput:
        return self.head(self.features(x_ce))
