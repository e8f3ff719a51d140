import math

import numpy as np

from scafusion.config import HeadConfig
from scafusion.entities.heads import HeadOutput
from scafusion.value_objects import BEVGridSpec, Box3D

LOG_SIZE_LIMIT = 8.0


def circular_nms(boxes: list[Box3D], radius: float) -> list[Box3D]:
    """Greedy per-class suppression of boxes centred near a kept box.

    A box is dropped when its centre lies within ``radius`` of a kept box of its class.

    Args:
        boxes: Scored boxes.
        radius: Suppression radius in meters.

    Returns:
        Kept boxes in descending score order.
    """
    ordered = sorted(boxes, key=lambda b: -b.score)
    kept: list[Box3D] = []
    for box in ordered:
        if all(
            other.label != box.label or box.distance_2d(other) > radius
            for other in kept
        ):
            kept.append(box)
    return kept


def decode_sample(
    cls: np.ndarray,
    offset: np.ndarray,
    height: np.ndarray,
    dim: np.ndarray,
    rot: np.ndarray,
    grid: BEVGridSpec,
    config: HeadConfig,
    apply_nms: bool = True,
) -> list[Box3D]:
    """Boxes from one sample's dense maps (each ``k x H x W``).

    A cell is kept when ``sigmoid(max logit) >= score_thresh``; the best ``max_boxes``
    survive (ties by cell order) before optional NMS.
    """
    logits = cls.astype(np.float64)
    best = logits.max(axis=0)
    label = logits.argmax(axis=0)
    score = 1.0 / (1.0 + np.exp(-best))
    rows, cols = np.nonzero(score >= config.score_thresh)
    order = np.argsort(-score[rows, cols], kind="stable")[: config.max_boxes]
    boxes = []
    for r, c in zip(rows[order], cols[order]):
        x = grid.x_range[0] + (r + 0.5 + float(offset[0, r, c])) * grid.cell_size
        y = grid.y_range[0] + (c + 0.5 + float(offset[1, r, c])) * grid.cell_size
        log_size = dim[:, r, c].astype(np.float64)
        size = np.exp(np.clip(log_size, -LOG_SIZE_LIMIT, LOG_SIZE_LIMIT))
        yaw = math.atan2(float(rot[0, r, c]), float(rot[1, r, c]))
        centre = (x, y, float(height[0, r, c]))
        boxes.append(Box3D(centre, size, yaw, int(label[r, c]), float(score[r, c])))
    if apply_nms and config.nms_radius > 0:
        return circular_nms(boxes, config.nms_radius)
    return boxes


def decode_boxes(
    output: HeadOutput,
    grid: BEVGridSpec,
    config: HeadConfig,
    apply_nms: bool = True,
) -> list[list[Box3D]]:
    """Decode a batched head output into one box list per sample.

    Training-time decoding passes ``apply_nms=False``.
    """
    maps = {name: tensor.data for name, tensor in output.fields().items()}
    return [
        decode_sample(
            maps["cls"][n],
            maps["offset"][n],
            maps["height"][n],
            maps["dim"][n],
            maps["rot"][n],
            grid,
            config,
            apply_nms,
        )
        for n in range(maps["cls"].shape[0])
    ]
