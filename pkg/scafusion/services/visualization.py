"""Bird's-eye-view raster of one sample.

LiDAR density is drawn under ground-truth, true-positive and false-positive boxes.
"""

import logging
from pathlib import Path

import numpy as np

from scafusion.services.dataset_io import write_ppm
from scafusion.services.metrics import TP_THRESHOLD, match_predictions
from scafusion.value_objects import CLASS_NAMES, BEVGridSpec, Box3D, PointCloud

logger = logging.getLogger(__name__)

GT_COLOR = (0, 200, 0)
TP_COLOR = (230, 210, 0)
FP_COLOR = (220, 30, 30)
PIXELS_PER_CELL = 4


def true_positive_flags(
    preds: list[Box3D], gts: list[Box3D], threshold: float = TP_THRESHOLD
) -> list[bool]:
    """Whether each prediction, in input order, matches a ground truth of its class."""
    flags = [False] * len(preds)
    for label in range(len(CLASS_NAMES)):
        members = [k for k, box in enumerate(preds) if box.label == label]
        if not members:
            continue
        matches = match_predictions(
            [[preds[k] for k in members]], [gts], threshold, label
        )
        ranked = sorted(members, key=lambda k: -(preds[k].score or 0.0))
        for k, hit in zip(ranked, matches.is_tp):
            flags[k] = bool(hit)
    return flags


class BEVCanvas:
    """RGB raster over a BEV grid with forward (+x) pointing up and +y to the left.

    Args:
        grid: Area to draw.
        scale: Pixels per grid cell.
    """

    def __init__(self, grid: BEVGridSpec, scale: int = PIXELS_PER_CELL):
        if scale < 1:
            raise ValueError(f"scale has to be at least 1 - not {scale}")
        self.grid = grid
        self.scale = scale
        self.image = np.zeros(
            (grid.height * scale, grid.width * scale, 3), dtype=np.uint8
        )

    def to_pixels(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        per_meter = self.scale / self.grid.cell_size
        height, width = self.image.shape[:2]
        rows = height - 1 - np.floor((xy[:, 0] - self.grid.x_range[0]) * per_meter)
        cols = width - 1 - np.floor((xy[:, 1] - self.grid.y_range[0]) * per_meter)
        return rows.astype(np.int64), cols.astype(np.int64)

    def _inside(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        height, width = self.image.shape[:2]
        return (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)

    def draw_points(self, points: PointCloud) -> None:
        """Grey-level hit density, one shade step per point."""
        rows, cols = self.to_pixels(points.xyz[:, :2])
        inside = self._inside(rows, cols)
        density = np.zeros(self.image.shape[:2], dtype=np.int64)
        np.add.at(density, (rows[inside], cols[inside]), 1)
        shade = np.minimum(density * 60, 180).astype(np.uint8)
        self.image[..., :] = np.maximum(self.image, shade[..., None])

    def draw_segment(
        self, start: np.ndarray, end: np.ndarray, color: tuple[int, int, int]
    ) -> None:
        length = float(np.hypot(*(np.asarray(end) - np.asarray(start))))
        steps = max(2, int(np.ceil(length / self.grid.cell_size * self.scale)) * 2)
        line = np.linspace(start, end, steps)
        rows, cols = self.to_pixels(line)
        inside = self._inside(rows, cols)
        self.image[rows[inside], cols[inside]] = color

    def draw_box(self, box: Box3D, color: tuple[int, int, int]) -> None:
        """Outline plus a heading tick from the centre to the front edge."""
        corners = box.bev_corners()
        for k in range(4):
            self.draw_segment(corners[k], corners[(k + 1) % 4], color)
        front = (corners[0] + corners[3]) / 2.0
        self.draw_segment(np.array(box.center[:2]), front, color)


def render_bev(
    grid: BEVGridSpec,
    points: PointCloud,
    gts: list[Box3D],
    preds: list[Box3D],
    scale: int = PIXELS_PER_CELL,
) -> np.ndarray:
    """``H x W x 3`` uint8 raster.

    Ground truth is green, true positives yellow and false positives red.
    """
    canvas = BEVCanvas(grid, scale)
    canvas.draw_points(points)
    for box in gts:
        canvas.draw_box(box, GT_COLOR)
    for box, hit in zip(preds, true_positive_flags(preds, gts)):
        canvas.draw_box(box, TP_COLOR if hit else FP_COLOR)
    return canvas.image


def write_bev(path: str | Path, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(path, image)
    logger.info("BEV visualization written to %s", path)
    return path
