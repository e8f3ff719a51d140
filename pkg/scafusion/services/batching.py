import numpy as np

from scafusion.entities.scafusion_model import ModelInput
from scafusion.entities.scene import SceneSample
from scafusion.errors import ShapeError
from scafusion.value_objects import Box3D, CameraCalib

INPUT_MULTIPLE = 16


def area_downsample(array: np.ndarray, factor: int) -> np.ndarray:
    """Mean over ``factor x factor`` blocks of the first two axes.

    A trailing remainder that does not fill a block is dropped.
    """
    if factor == 1:
        return array.astype(np.float64)
    h, w = array.shape[0] // factor, array.shape[1] // factor
    trimmed = array[: h * factor, : w * factor].astype(np.float64)
    blocks = trimmed.reshape(h, factor, w, factor, *array.shape[2:])
    return blocks.mean(axis=(1, 3))


def depth_downsample(depth: np.ndarray, factor: int) -> np.ndarray:
    """Block mean over hit pixels only; blocks with no hit stay 0."""
    hits = area_downsample((depth > 0).astype(np.float64), factor)
    total = area_downsample(depth, factor)
    return np.where(hits > 0, total / np.maximum(hits, 1e-12), 0.0)


def model_resolution(calib: CameraCalib, factor: int) -> tuple[int, int]:
    """``(width, height)`` after downsampling.

    Right and bottom edges are cropped to a multiple of 16.
    """
    width = (calib.width // factor) // INPUT_MULTIPLE * INPUT_MULTIPLE
    height = (calib.height // factor) // INPUT_MULTIPLE * INPUT_MULTIPLE
    if width == 0 or height == 0:
        raise ShapeError(
            f"image {calib.width}x{calib.height}"
            f" is too small for downsample factor {factor}"
        )
    return width, height


def prepare_camera(
    sample: SceneSample, factor: int
) -> tuple[np.ndarray, np.ndarray, CameraCalib]:
    """RGB (3 x H x W in [0, 1]), depth and calibration at model resolution."""
    width, height = model_resolution(sample.calib, factor)
    image = area_downsample(sample.image, factor)[:height, :width] / 255.0
    depth = depth_downsample(sample.depth, factor)[:height, :width]
    scaled = sample.calib.scaled(1.0 / factor)
    calib = CameraCalib(
        scaled.fx,
        scaled.fy,
        scaled.cx,
        scaled.cy,
        width,
        height,
        scaled.rotation,
        scaled.translation,
    )
    return image.transpose(2, 0, 1), depth, calib


def make_batch(
    samples: list[SceneSample], factor: int
) -> tuple[ModelInput, list[list[Box3D]]]:
    """Stack samples into a model batch and collect their ground-truth boxes.

    Raises:
        ShapeError: If the samples are empty or their images differ in size.
    """
    if not samples:
        raise ShapeError("cannot batch zero samples")
    prepared = [prepare_camera(sample, factor) for sample in samples]
    shapes = {image.shape for image, _, _ in prepared}
    if len(shapes) != 1:
        raise ShapeError(f"batch images differ in size: {sorted(shapes)}")
    inputs = ModelInput(
        images=np.stack([image for image, _, _ in prepared]).astype(np.float32),
        depth_maps=np.stack([depth for _, depth, _ in prepared]).astype(np.float32),
        calibs=tuple(calib for _, _, calib in prepared),
        point_clouds=tuple(sample.point_cloud for sample in samples),
    )
    return inputs, [list(sample.boxes) for sample in samples]
