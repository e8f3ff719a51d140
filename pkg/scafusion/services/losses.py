"""Target rendering and the composite detection loss."""

import math
from dataclasses import dataclass

import numpy as np

from scafusion.autograd import Tensor
from scafusion.autograd import functional as F
from scafusion.config import LossConfig
from scafusion.entities.heads import REGRESSION_FIELDS, HeadOutput
from scafusion.entities.scafusion_model import ModelOutput
from scafusion.value_objects import CLASS_NAMES, BEVGridSpec, Box3D

FOCAL_EPS = 1e-4


@dataclass(frozen=True)
class Targets:
    """Dense training targets, ``N x k x H x W`` each.

    ``mask`` is the ``N x H x W`` positive mask.
    """

    heatmap: np.ndarray
    offset: np.ndarray
    height: np.ndarray
    dim: np.ndarray
    rot: np.ndarray
    mask: np.ndarray

    def regression(self) -> dict[str, np.ndarray]:
        return {
            "offset": self.offset,
            "height": self.height,
            "dim": self.dim,
            "rot": self.rot,
        }

    @property
    def num_positive(self) -> int:
        return int(self.mask.sum())


def gaussian_radius(box: Box3D, cell_size: float) -> int:
    """Heatmap radius in cells from the box footprint (at least one cell)."""
    return max(1, math.ceil(min(box.size[0], box.size[1]) / 2.0 / cell_size))


def draw_gaussian(heatmap: np.ndarray, row: int, col: int, radius: int) -> None:
    """Max-blend a Gaussian of ``sigma = diameter / 6`` centred on ``(row, col)``.

    The heatmap is updated in place.
    """
    diameter = 2 * radius + 1
    sigma = diameter / 6.0
    offsets = np.arange(-radius, radius + 1)
    squared = offsets[:, None] ** 2 + offsets[None, :] ** 2
    gaussian = np.exp(-squared / (2.0 * sigma**2))
    gaussian[gaussian < np.finfo(np.float64).eps * gaussian.max()] = 0.0
    height, width = heatmap.shape
    top, bottom = min(row, radius), min(height - row, radius + 1)
    left, right = min(col, radius), min(width - col, radius + 1)
    window = heatmap[row - top : row + bottom, col - left : col + right]
    patch = gaussian[radius - top : radius + bottom, radius - left : radius + right]
    np.maximum(window, patch, out=window)


def render_targets(
    boxes: list[Box3D], grid: BEVGridSpec, num_classes: int = len(CLASS_NAMES)
) -> Targets:
    """Targets for one sample: one positive cell per box, the one holding its centre.

    Boxes whose centre falls outside the grid are ignored.
    """
    h, w = grid.shape
    heatmap = np.zeros((num_classes, h, w))
    fields = {
        name: np.zeros((size, h, w)) for name, size in REGRESSION_FIELDS.items()
    }
    mask = np.zeros((h, w))
    for box in boxes:
        x, y, z = box.center
        i, j = (int(v) for v in grid.cell_coords(x, y))
        if not (0 <= i < h and 0 <= j < w):
            continue
        draw_gaussian(heatmap[box.label], i, j, gaussian_radius(box, grid.cell_size))
        heatmap[box.label, i, j] = 1.0
        fields["offset"][:, i, j] = (
            (x - grid.x_range[0]) / grid.cell_size - i - 0.5,
            (y - grid.y_range[0]) / grid.cell_size - j - 0.5,
        )
        fields["height"][0, i, j] = z
        fields["dim"][:, i, j] = np.log(box.size)
        fields["rot"][:, i, j] = (math.sin(box.yaw), math.cos(box.yaw))
        mask[i, j] = 1.0
    return Targets(heatmap=heatmap, mask=mask, **fields)


def stack_targets(targets: list[Targets]) -> Targets:
    names = ("heatmap", "offset", "height", "dim", "rot", "mask")
    return Targets(
        **{name: np.stack([getattr(t, name) for t in targets]) for name in names}
    )


def render_batch_targets(
    batch_boxes: list[list[Box3D]],
    grid: BEVGridSpec,
    num_classes: int = len(CLASS_NAMES),
) -> Targets:
    return stack_targets(
        [render_targets(boxes, grid, num_classes) for boxes in batch_boxes]
    )


def focal_loss(
    logits: Tensor, heatmap: np.ndarray, alpha: float = 2.0, beta: float = 4.0
) -> Tensor:
    """Penalty-reduced pixel focal loss over Gaussian heatmaps.

    Normalised by the positive count.
    """
    prob = F.clamp(F.sigmoid(logits), FOCAL_EPS, 1.0 - FOCAL_EPS)
    positive = (heatmap == 1.0).astype(logits.dtype)
    negative = 1.0 - positive
    negative_weight = (np.power(1.0 - heatmap, beta) * negative).astype(logits.dtype)
    pos_term = F.log(prob) * F.power(1.0 - prob, alpha) * positive
    neg_term = F.log(1.0 - prob) * F.power(prob, alpha) * negative_weight
    num_positive = max(float(positive.sum()), 1.0)
    return -F.reduce_sum(pos_term + neg_term) / num_positive


def regression_loss(output: HeadOutput, targets: Targets) -> Tensor:
    """Masked L1 over every regression field, normalised by the positive count."""
    num_positive = max(float(targets.mask.sum()), 1.0)
    mask = targets.mask[:, None, :, :]
    fields = output.fields()
    total = None
    for name, target in targets.regression().items():
        pred = fields[name]
        error = F.absolute(pred - target.astype(pred.dtype))
        term = F.reduce_sum(error * mask.astype(pred.dtype))
        total = term if total is None else total + term
    return total / num_positive


def detection_loss(
    output: HeadOutput, targets: Targets, config: LossConfig
) -> tuple[Tensor, Tensor]:
    """``(heatmap term, regression term)`` for one head."""
    heat = focal_loss(
        output.cls, targets.heatmap, config.focal_alpha, config.focal_beta
    )
    return heat, regression_loss(output, targets)


@dataclass(frozen=True)
class LossBreakdown:
    total: Tensor
    components: dict[str, float]


def compute_losses(
    output: ModelOutput, targets: Targets, config: LossConfig
) -> LossBreakdown:
    """``L_det(main) + lambda_aux * L_det(aux) + lambda_align * L_align``.

    Components missing from ``output`` (aux head, alignment) contribute nothing.
    """
    heat, reg = detection_loss(output.main, targets, config)
    det = heat + reg
    total = det
    components = {"heatmap": heat.item(), "regression": reg.item(), "det": det.item()}
    if output.aux is not None and config.lambda_aux > 0:
        aux_heat, aux_reg = detection_loss(output.aux, targets, config)
        aux = aux_heat + aux_reg
        total = total + config.lambda_aux * aux
        components["aux"] = aux.item()
    if output.align_loss is not None and config.lambda_align > 0:
        total = total + config.lambda_align * output.align_loss
        components["align"] = output.align_loss.item()
    components["total"] = total.item()
    return LossBreakdown(total=total, components=components)
