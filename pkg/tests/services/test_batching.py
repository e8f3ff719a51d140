import numpy as np
import pytest

from scafusion.errors import ShapeError
from scafusion.services.batching import (
    area_downsample,
    depth_downsample,
    make_batch,
    model_resolution,
    prepare_camera,
)


class TestDownsampling:
    """Test block averaging."""

    def test_area_downsample(self):
        """Test each output is the mean of its block and the remainder is dropped."""
        array = np.arange(20, dtype=float).reshape(4, 5)

        result = area_downsample(array, 2)

        np.testing.assert_allclose(result, [[3.0, 5.0], [13.0, 15.0]])

    def test_area_downsample_keeps_channels(self):
        """Test trailing channel axes survive."""
        assert area_downsample(np.ones((8, 8, 3)), 4).shape == (2, 2, 3)

    def test_depth_ignores_empty_pixels(self):
        """Test sky pixels do not drag the block depth towards zero."""
        depth = np.array([[2.0, 0.0, 0.0, 0.0], [4.0, 0.0, 0.0, 0.0]])

        result = depth_downsample(depth, 2)

        np.testing.assert_allclose(result, [[3.0, 0.0]])


class TestModelResolution:
    """Test the model input size."""

    def test_desk_at_quarter(self, tiny_samples):
        """Test 320 x 192 at factor 4 gives 80 x 48."""
        assert model_resolution(tiny_samples[0].calib, 4) == (80, 48)

    def test_crop_to_multiple_of_16(self, tiny_samples):
        """Test 320 x 192 at factor 3 is cropped to 96 x 64."""
        assert model_resolution(tiny_samples[0].calib, 3) == (96, 64)

    def test_too_small(self, tiny_samples):
        """Test a factor leaving less than 16 pixels raises."""
        with pytest.raises(ShapeError, match="too small"):
            model_resolution(tiny_samples[0].calib, 16)


class TestBatch:
    """Test batch assembly."""

    def test_prepare_camera(self, tiny_samples):
        """Test images are scaled to [0, 1] channel-first with a matching calib."""
        image, depth, calib = prepare_camera(tiny_samples[0], 4)

        assert image.shape == (3, 48, 80)
        assert depth.shape == (48, 80)
        assert 0.0 <= image.min() and image.max() <= 1.0
        assert (calib.width, calib.height) == (80, 48)
        assert calib.fx == pytest.approx(tiny_samples[0].calib.fx / 4)

    def test_make_batch(self, tiny_samples):
        """Test samples stack into float32 arrays with boxes alongside."""
        inputs, boxes = make_batch(tiny_samples, 4)

        assert inputs.images.shape == (2, 3, 48, 80)
        assert inputs.images.dtype == np.float32
        assert inputs.depth_maps.shape == (2, 48, 80)
        assert inputs.point_clouds[1] is tiny_samples[1].point_cloud
        assert boxes == [list(s.boxes) for s in tiny_samples]

    def test_empty_batch(self):
        """Test an empty sample list raises ShapeError."""
        with pytest.raises(ShapeError, match="zero samples"):
            make_batch([], 4)
