"""Camera-to-BEV lift-splat and the depth stream feeding contrastive alignment."""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from scafusion.autograd import Tensor
from scafusion.autograd import functional as F
from scafusion.entities.backbone import Backbone
from scafusion.entities.layers import Conv2d, ConvBlock
from scafusion.entities.module import Module
from scafusion.errors import ShapeError
from scafusion.value_objects import BEVGridSpec, CameraCalib

logger = logging.getLogger(__name__)

INSTANCE_MODES = ("channel", "camera")


def build_frustum(
    calib: CameraCalib, depth_bins: Sequence[float], feat_size: tuple[int, int]
) -> Tensor:
    """Ego-frame 3D point of every (depth bin, feature row, feature column).

    Feature pixel ``u'`` sits at image pixel ``(u' + 0.5) * stride - 0.5``.

    Args:
        calib: Calibration of the image the features were computed from.
        depth_bins: Strictly increasing depths along the optical axis, meters.
        feat_size: Feature map ``(H', W')``.

    Returns:
        ``D x H' x W' x 3`` tensor.

    Raises:
        ValueError: If the bins are empty or not strictly increasing.
    """
    bins = np.asarray(depth_bins, dtype=np.float64)
    if bins.size < 1 or np.any(np.diff(bins) <= 0):
        raise ValueError(
            "depth bins have to be strictly increasing and nonempty"
            f" - not {bins.tolist()}"
        )
    h, w = feat_size
    v = (np.arange(h) + 0.5) * (calib.height / h) - 0.5
    u = (np.arange(w) + 0.5) * (calib.width / w) - 0.5
    d_grid, v_grid, u_grid = np.meshgrid(bins, v, u, indexing="ij")
    return Tensor(calib.unproject(u_grid, v_grid, d_grid))


def depth_context_split(
    feat: Tensor, n_bins: int, context_channels: int
) -> tuple[Tensor, Tensor]:
    """Split head output into a per-pixel depth distribution and context features.

    Raises:
        ShapeError: If the channel extent is not ``n_bins + context_channels``.
    """
    if feat.ndim != 4 or feat.shape[1] != n_bins + context_channels:
        raise ShapeError(
            f"depth/context head channels (dim 1) have to be"
            f" {n_bins}+{context_channels}, got shape {feat.shape}"
        )
    logits, context = F.split(feat, [n_bins, context_channels], axis=1)
    return F.softmax(logits, axis=1), context


def splat_indices(frustum: Tensor, grid: BEVGridSpec) -> np.ndarray:
    """Flat BEV cell per frustum point in ``(d, h, w)`` order.

    Points outside the grid or its z band get ``-1``.
    """
    return grid.flat_index(frustum.data.reshape(-1, 3).astype(np.float64))


def lift_splat(
    context: Tensor,
    depth_probs: Tensor,
    frustums: Sequence[Tensor],
    grid: BEVGridSpec,
) -> Tensor:
    """Scatter depth-weighted context features into the BEV grid.

    Args:
        context: ``N x C x H' x W'`` features.
        depth_probs: ``N x D x H' x W'`` distributions.
        frustums: One ``D x H' x W' x 3`` frustum per sample.
        grid: Target raster.

    Returns:
        ``N x C x H_bev x W_bev`` camera BEV map.
    """
    n, c, h, w = context.shape
    d = depth_probs.shape[1]
    if depth_probs.shape != (n, d, h, w) or len(frustums) != n:
        raise ShapeError(
            f"lift_splat inputs disagree: context {context.shape},"
            f" depth {depth_probs.shape}"
        )
    contexts = F.split(context, [1] * n, axis=0)
    probs = F.split(depth_probs, [1] * n, axis=0)
    maps = []
    for sample, (ctx, prob, frustum) in enumerate(zip(contexts, probs, frustums)):
        if frustum.shape != (d, h, w, 3):
            raise ShapeError(
                f"frustum shape {frustum.shape} does not match ({d}, {h}, {w}, 3)"
            )
        index = splat_indices(frustum, grid)
        logger.debug(
            "lift_splat sample %d: %d of %d frustum points dropped",
            sample,
            int(np.sum(index < 0)),
            index.size,
        )
        lifted = prob.reshape(d, 1, h, w) * ctx.reshape(1, c, h, w)
        rows = lifted.permute(0, 2, 3, 1).reshape(d * h * w, c)
        maps.append(F.scatter_add(rows, index, grid.shape))
    return F.stack(maps, axis=0)


class Neck(Module):
    """Merges backbone stages 2 and 3 into one stride-8 map."""

    def __init__(
        self, in_widths: tuple[int, int], out_channels: int, rng: np.random.Generator
    ):
        super().__init__()
        self.lateral2 = self.register_module(
            "lateral2", Conv2d(in_widths[0], out_channels, 1, rng)
        )
        self.lateral3 = self.register_module(
            "lateral3", Conv2d(in_widths[1], out_channels, 1, rng)
        )
        self.smooth = self.register_module(
            "smooth", ConvBlock(out_channels, out_channels, rng)
        )

    def forward(self, stage2: Tensor, stage3: Tensor) -> Tensor:
        merged = self.lateral2(stage2) + F.bilinear_upsample2x(self.lateral3(stage3))
        return self.smooth(merged)


class CameraBranch(Module):
    """Backbone, neck and depth/context head; produces camera BEV features.

    Args:
        widths: Backbone stage widths.
        heads: Backbone attention heads.
        neck_channels: Width of the merged stride-8 map.
        depth_bins: Depth bin centres, meters.
        context_channels: ``C_CE``.
        rng: Initialisation generator.
        mona: Whether the backbone carries adapters.
    """

    FEATURE_STRIDE = 8

    def __init__(
        self,
        widths: tuple[int, int, int],
        heads: tuple[int, int, int],
        neck_channels: int,
        depth_bins: Sequence[float],
        context_channels: int,
        rng: np.random.Generator,
        mona: bool = True,
    ):
        super().__init__()
        self.depth_bins = tuple(float(b) for b in depth_bins)
        self.context_channels = context_channels
        self.backbone = self.register_module(
            "backbone", Backbone(widths, heads, rng, mona=mona)
        )
        self.neck = self.register_module(
            "neck", Neck((widths[1], widths[2]), neck_channels, rng)
        )
        self.depth_head = self.register_module(
            "depth_head",
            Conv2d(neck_channels, len(self.depth_bins) + context_channels, 1, rng),
        )

    def perspective_features(self, image: Tensor) -> tuple[Tensor, Tensor]:
        """Depth distribution and context features in the image plane."""
        _, stage2, stage3 = self.backbone(image)
        head = self.depth_head(self.neck(stage2, stage3))
        return depth_context_split(head, len(self.depth_bins), self.context_channels)

    def forward(
        self, image: Tensor, calibs: Sequence[CameraCalib], grid: BEVGridSpec
    ) -> tuple[Tensor, Tensor]:
        """Return ``(context, camera_bev)``.

        The context is the RGB side of the alignment loss.
        """
        depth_probs, context = self.perspective_features(image)
        feat_size = context.shape[2:]
        frustums = [
            build_frustum(calib, self.depth_bins, feat_size) for calib in calibs
        ]
        return context, lift_splat(context, depth_probs, frustums, grid)


def depth_features(depth_maps: np.ndarray, stride: int, max_depth: float) -> Tensor:
    """Pool metric depth maps to feature resolution.

    The two channels are the normalised mean depth and the hit fraction.

    Args:
        depth_maps: ``N x H x W`` depth, 0 where nothing was hit.
        stride: Pooling window edge.
        max_depth: Depth mapped to 1.0.

    Returns:
        ``N x 2 x H/stride x W/stride`` tensor.
    """
    n, h, w = depth_maps.shape
    windows = depth_maps.reshape(n, h // stride, stride, w // stride, stride)
    windows = windows.transpose(0, 1, 3, 2, 4)
    windows = windows.reshape(n, h // stride, w // stride, stride * stride)
    hits = windows > 0
    hit_fraction = hits.mean(axis=-1)
    mean_depth = np.where(
        hits.any(axis=-1),
        windows.sum(axis=-1) / np.maximum(hits.sum(axis=-1), 1),
        0.0,
    )
    return Tensor(
        np.stack([np.minimum(mean_depth / max_depth, 1.0), hit_fraction], axis=1)
    )


def geometric_widths(start: int, end: int, steps: int = 3) -> list[int]:
    """Channel widths stepping geometrically from ``start`` to ``end``."""
    return [
        max(1, int(round(start * (end / start) ** (k / steps))))
        for k in range(1, steps + 1)
    ]


class DepthAlignEncoder(Module):
    """Three 1x1 conv blocks lifting depth features to ``C_CE`` channels."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        widths = [in_channels] + geometric_widths(in_channels, out_channels)
        self.blocks = [
            self.register_module(
                f"block{k}", ConvBlock(widths[k], widths[k + 1], rng, kernel_size=1)
            )
            for k in range(3)
        ]

    @property
    def out_channels(self) -> int:
        return self.blocks[-1].conv.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


@dataclass(frozen=True)
class AlignBatch:
    """Matched RGB/depth instance vectors for the NT-Xent loss.

    Attributes:
        rgb: ``N x L`` anchors.
        depth: ``N x L`` positives, row-aligned with ``rgb``.
        temperature: ``tau``.
        instance_mode: ``"channel"`` (one instance per sample and channel) or
            ``"camera"``.
    """

    rgb: Tensor
    depth: Tensor
    temperature: float
    instance_mode: str = "channel"

    def __post_init__(self):
        if self.rgb.shape != self.depth.shape or self.rgb.ndim != 2:
            raise ShapeError(
                f"alignment stacks differ: {self.rgb.shape} vs {self.depth.shape}"
            )
        if self.temperature <= 0:
            raise ValueError(f"temperature has to be positive - not {self.temperature}")
        if self.rgb.shape[0] < 2:
            raise ShapeError(
                "alignment needs at least 2 instances (dim 0),"
                f" got {self.rgb.shape[0]}"
            )

    @property
    def count(self) -> int:
        return self.rgb.shape[0]


def alignment_instances(feature_shape: tuple[int, ...], instance_mode: str) -> int:
    """Rows an alignment batch of ``B x C x H x W`` features would hold."""
    if instance_mode == "channel":
        return feature_shape[0] * feature_shape[1]
    return feature_shape[0]


def cam_align_preprocess(
    rgb_feat: Tensor,
    depth_feat: Tensor,
    encoder: DepthAlignEncoder,
    temperature: float,
    instance_mode: str = "channel",
) -> AlignBatch:
    """Encode depth features to the RGB width and flatten both into instance vectors.

    Args:
        rgb_feat: ``B x C_CE x H' x W'`` context features entering the lift.
        depth_feat: ``B x C_in x H' x W'`` depth features.
        encoder: Channel-matching conv stack.
        temperature: NT-Xent temperature.
        instance_mode: ``"channel"`` gives ``B * C_CE`` instances, ``"camera"``
            gives ``B``.

    Raises:
        ShapeError: If batch or spatial extents differ.
        ValueError: If the instance mode is unknown.
    """
    if instance_mode not in INSTANCE_MODES:
        raise ValueError(
            f"instance mode has to be one of {INSTANCE_MODES} - not {instance_mode!r}"
        )
    if rgb_feat.shape[0] != depth_feat.shape[0]:
        raise ShapeError(
            f"instance counts (dim 0) differ: rgb {rgb_feat.shape[0]}"
            f" vs depth {depth_feat.shape[0]}"
        )
    if rgb_feat.shape[2:] != depth_feat.shape[2:]:
        raise ShapeError(
            f"spatial sizes (dims 2,3) differ: rgb {rgb_feat.shape}"
            f" vs depth {depth_feat.shape}"
        )
    encoded = encoder(depth_feat)
    b, c, h, w = rgb_feat.shape
    if instance_mode == "channel":
        shape = (b * c, h * w)
    else:
        shape = (b, c * h * w)
    return AlignBatch(
        rgb_feat.reshape(shape), encoded.reshape(shape), temperature, instance_mode
    )


def keep_nonzero_instances(batch: AlignBatch) -> AlignBatch | None:
    """Drop instance pairs where either vector is all zero (a dead ReLU channel).

    Returns:
        The batch itself when nothing is dropped, ``None`` when fewer than 2 pairs
        remain.
    """
    rgb_alive = np.abs(batch.rgb.data).sum(axis=1) > 0
    keep = rgb_alive & (np.abs(batch.depth.data).sum(axis=1) > 0)
    if keep.all():
        return batch
    logger.debug(
        "alignment: dropping %d of %d zero-norm instances",
        int((~keep).sum()),
        batch.count,
    )
    if keep.sum() < 2:
        return None
    select = Tensor(np.eye(batch.count)[keep], dtype=batch.rgb.dtype)
    return AlignBatch(
        F.matmul(select, batch.rgb),
        F.matmul(select, batch.depth),
        batch.temperature,
        batch.instance_mode,
    )


def nt_xent_align_loss(batch: AlignBatch) -> Tensor:
    """RGB-anchored NT-Xent over cosine similarities.

    ``L = -(1/N) sum_i log(exp(s_ii / tau) / sum_j exp(s_ij / tau))``.

    Raises:
        ValueError: If any instance vector has zero norm.
    """
    for name, stack in (("rgb", batch.rgb), ("depth", batch.depth)):
        norms = np.linalg.norm(stack.data.astype(np.float64), axis=1)
        if np.any(norms == 0):
            raise ValueError(
                f"{name} instance {int(np.argmin(norms))} has zero norm;"
                " cosine similarity undefined"
            )
    rgb_norm = F.reduce_sum(batch.rgb * batch.rgb, axis=1, keepdims=True)
    depth_norm = F.reduce_sum(batch.depth * batch.depth, axis=1, keepdims=True)
    rgb = batch.rgb / F.power(rgb_norm, 0.5)
    depth = batch.depth / F.power(depth_norm, 0.5)
    logits = F.matmul(rgb, depth.permute(1, 0)) / batch.temperature
    shift = Tensor(logits.data.max(axis=1, keepdims=True), dtype=logits.dtype)
    log_denominator = F.log(F.reduce_sum(F.exp(logits - shift), axis=1))
    log_denominator = log_denominator + shift.reshape(-1)
    positives = F.reduce_sum(logits * np.eye(batch.count, dtype=logits.dtype), axis=1)
    return F.reduce_mean(log_denominator - positives)
