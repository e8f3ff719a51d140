import math

import numpy as np

from scafusion.autograd import Tensor
from scafusion.autograd import functional as F
from scafusion.entities.layers import LayerNorm, Linear
from scafusion.entities.module import Module
from scafusion.entities.mona import MonaAdapter
from scafusion.errors import ShapeError

PATCH_SIZE = 4
BLOCKS_PER_STAGE = 2


class SelfAttention(Module):
    """Full multi-head self-attention over all tokens of a stage grid."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if channels % heads:
            raise ValueError(
                f"channels {channels} have to be divisible by heads {heads}"
            )
        self.heads = heads
        self.qkv = self.register_module("qkv", Linear(channels, 3 * channels, rng))
        self.proj = self.register_module("proj", Linear(channels, channels, rng))

    def forward(self, x: Tensor) -> Tensor:
        n, length, channels = x.shape
        head_dim = channels // self.heads
        q, k, v = (
            part.reshape(n, length, self.heads, head_dim).permute(0, 2, 1, 3)
            for part in F.split(self.qkv(x), [channels] * 3, axis=-1)
        )
        scores = F.matmul(q, k.permute(0, 1, 3, 2)) / math.sqrt(head_dim)
        context = F.matmul(F.softmax(scores, axis=-1), v)
        return self.proj(context.permute(0, 2, 1, 3).reshape(n, length, channels))


class TransformerBlock(Module):
    """Pre-norm attention and MLP, with a Mona adapter after each when enabled.

    Args:
        channels: Token width.
        heads: Attention heads.
        rng: Initialisation generator.
        mona: Whether to insert adapters.
        mlp_ratio: Hidden width multiplier of the MLP.
    """

    def __init__(
        self,
        channels: int,
        heads: int,
        rng: np.random.Generator,
        mona: bool = True,
        mlp_ratio: int = 4,
    ):
        super().__init__()
        hidden = mlp_ratio * channels
        self.norm1 = self.register_module("norm1", LayerNorm(channels))
        self.attn = self.register_module("attn", SelfAttention(channels, heads, rng))
        self.norm2 = self.register_module("norm2", LayerNorm(channels))
        self.fc1 = self.register_module("fc1", Linear(channels, hidden, rng))
        self.fc2 = self.register_module("fc2", Linear(hidden, channels, rng))
        self.mona1 = self.mona2 = None
        if mona:
            self.mona1 = self.register_module("mona1", MonaAdapter(channels, rng))
            self.mona2 = self.register_module("mona2", MonaAdapter(channels, rng))

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        x = x + self.attn(self.norm1(x))
        if self.mona1 is not None:
            x = self.mona1(x, hw)
        x = x + self.fc2(F.gelu(self.fc1(self.norm2(x))))
        if self.mona2 is not None:
            x = self.mona2(x, hw)
        return x


def space_to_depth(x: Tensor, factor: int) -> Tensor:
    """``N x H x W x C`` -> ``N x H/f x W/f x (f*f*C)``, channel-last."""
    n, h, w, c = x.shape
    blocks = x.reshape(n, h // factor, factor, w // factor, factor, c)
    blocks = blocks.permute(0, 1, 3, 2, 4, 5)
    return blocks.reshape(n, h // factor, w // factor, factor * factor * c)


class PatchMerging(Module):
    """2x2 neighbourhood concat, LayerNorm, linear reduction."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.norm = self.register_module("norm", LayerNorm(4 * in_channels))
        self.reduction = self.register_module(
            "reduction", Linear(4 * in_channels, out_channels, rng, bias=False)
        )

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        n, _, c = x.shape
        h, w = hw
        merged = space_to_depth(x.reshape(n, h, w, c), 2)
        merged = merged.reshape(n, (h // 2) * (w // 2), 4 * c)
        return self.reduction(self.norm(merged))


class Backbone(Module):
    """Three-stage transformer backbone returning maps at strides 4, 8 and 16.

    Args:
        widths: Channel width per stage.
        heads: Attention heads per stage.
        rng: Initialisation generator.
        mona: Whether blocks carry Mona adapters.
    """

    def __init__(
        self,
        widths: tuple[int, int, int],
        heads: tuple[int, int, int],
        rng: np.random.Generator,
        mona: bool = True,
    ):
        super().__init__()
        if len(widths) != 3 or len(heads) != 3:
            raise ValueError(
                f"backbone needs exactly 3 stages - not widths={widths}, heads={heads}"
            )
        self.widths = tuple(widths)
        self.mona = mona
        self.patch_embed = self.register_module(
            "patch_embed", Linear(3 * PATCH_SIZE * PATCH_SIZE, widths[0], rng)
        )
        self.patch_norm = self.register_module("patch_norm", LayerNorm(widths[0]))
        self.stages: list[list[TransformerBlock]] = []
        self.merges: list[PatchMerging] = []
        for s, (width, head_count) in enumerate(zip(widths, heads), start=1):
            if s > 1:
                merge = PatchMerging(widths[s - 2], width, rng)
                self.merges.append(self.register_module(f"merge{s}", merge))
            stage = Module()
            blocks = [
                stage.register_module(
                    f"block{b}", TransformerBlock(width, head_count, rng, mona=mona)
                )
                for b in range(BLOCKS_PER_STAGE)
            ]
            self.register_module(f"stage{s}", stage)
            self.stages.append(blocks)

    def forward(self, image: Tensor) -> list[Tensor]:
        """Run the three stages on an ``N x 3 x H x W`` image.

        Returns:
            NCHW maps with ``widths[i]`` channels at strides 4, 8, 16.

        Raises:
            ShapeError: If H or W is not divisible by 16.
        """
        n, c, h, w = image.shape
        if c != 3:
            raise ShapeError(f"backbone expects 3 image channels (dim 1), got {c}")
        if h % 16 or w % 16:
            raise ShapeError(
                f"backbone input height/width (dims 2,3) {h}x{w}"
                " have to be divisible by 16"
            )
        patches = space_to_depth(image.permute(0, 2, 3, 1), PATCH_SIZE)
        hw = (h // PATCH_SIZE, w // PATCH_SIZE)
        patches = patches.reshape(n, hw[0] * hw[1], -1)
        tokens = self.patch_norm(self.patch_embed(patches))
        features = []
        for s, blocks in enumerate(self.stages):
            if s > 0:
                tokens = self.merges[s - 1](tokens, hw)
                hw = (hw[0] // 2, hw[1] // 2)
            for block in blocks:
                tokens = block(tokens, hw)
            grid = tokens.reshape(n, hw[0], hw[1], tokens.shape[-1])
            features.append(grid.permute(0, 3, 1, 2))
        return features
