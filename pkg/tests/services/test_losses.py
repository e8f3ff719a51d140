import math

import numpy as np
import pytest

from scafusion.autograd import Tensor, precision
from scafusion.config import LossConfig
from scafusion.entities.heads import HeadOutput
from scafusion.entities.scafusion_model import ModelOutput
from scafusion.services.losses import (
    compute_losses,
    draw_gaussian,
    focal_loss,
    gaussian_radius,
    regression_loss,
    render_batch_targets,
    render_targets,
)
from scafusion.value_objects import BEVGridSpec, Box3D


def perfect_output(targets, confidence=20.0):
    """Head output reproducing the targets exactly."""
    logits = np.where(targets.heatmap == 1.0, confidence, -confidence)
    return HeadOutput(
        cls=Tensor(logits),
        offset=Tensor(targets.offset),
        height=Tensor(targets.height),
        dim=Tensor(targets.dim),
        rot=Tensor(targets.rot),
    )


class TestTargets:
    """Test dense target rendering."""

    def test_box_encoding(self, meteor_box, grid):
        """Test the centre cell carries offset, height, log size and yaw."""
        targets = render_targets([meteor_box], grid)

        assert targets.num_positive == 1
        assert targets.heatmap[0, 5, 5] == 1.0
        np.testing.assert_allclose(targets.offset[:, 5, 5], [-0.5, -0.5])
        assert targets.height[0, 5, 5] == pytest.approx(0.3)
        np.testing.assert_allclose(targets.dim[:, 5, 5], np.log([0.6, 0.5, 0.6]))
        np.testing.assert_allclose(targets.rot[:, 5, 5], [math.sin(0.3), math.cos(0.3)])

    def test_boxes_outside_grid_are_ignored(self, meteor_box, grid):
        """Test a box centred beyond the grid adds no target."""
        far = Box3D((30.0, 0.0, 0.3), (0.6, 0.5, 0.6), 0.0, 0)

        targets = render_targets([meteor_box, far], grid)

        assert targets.num_positive == 1

    def test_classes_use_separate_channels(self, meteor_box, platform_box):
        """Test each class draws into its own heatmap channel."""
        grid = BEVGridSpec((0.0, 16.0), (-8.0, 8.0), 1.0)
        targets = render_targets([meteor_box, platform_box], grid)

        assert targets.heatmap[0, 5, 9] == 1.0
        assert targets.heatmap[1, 10, 5] == 1.0
        assert targets.heatmap[1, 5, 9] == 0.0

    def test_batch_stacking(self, meteor_box, grid):
        """Test batch targets stack per sample."""
        targets = render_batch_targets([[meteor_box], []], grid)

        assert targets.heatmap.shape == (2, 2, 8, 8)
        assert targets.mask.sum(axis=(1, 2)).tolist() == [1.0, 0.0]

    def test_gaussian_radius(self, meteor_box, platform_box):
        """Test the radius follows the smaller footprint side, at least one cell."""
        assert gaussian_radius(meteor_box, 1.0) == 1
        assert gaussian_radius(platform_box, 0.5) == 2

    def test_gaussian_clipped_at_border(self):
        """Test a peak in the corner keeps its in-bounds part."""
        heatmap = np.zeros((3, 3))

        draw_gaussian(heatmap, 0, 0, 1)

        assert heatmap[0, 0] == 1.0
        assert heatmap[0, 1] == pytest.approx(math.exp(-2.0))
        assert heatmap[2, 2] == 0.0


class TestFocalLoss:
    """Test the penalty-reduced focal loss."""

    def test_positive_cell_at_even_odds(self):
        """Test a positive cell predicted at 0.5 costs 0.25 * log 2."""
        with precision(np.float64):
            loss = focal_loss(Tensor(np.zeros((1, 1, 1, 1))), np.ones((1, 1, 1, 1)))

        assert loss.item() == pytest.approx(0.25 * math.log(2.0), rel=1e-6)

    def test_negative_weight_near_peak(self):
        """Test negatives close to a peak are down-weighted by (1 - y)^beta."""
        with precision(np.float64):
            logits = Tensor(np.zeros((1, 1, 1, 1)))
            far = focal_loss(logits, np.zeros((1, 1, 1, 1)))
            near = focal_loss(logits, np.full((1, 1, 1, 1), 0.5))

        assert near.item() == pytest.approx(far.item() * 0.5**4, rel=1e-6)

    def test_perfect_prediction(self, meteor_box, grid):
        """Test confident correct logits give a loss close to zero."""
        targets = render_batch_targets([[meteor_box]], grid)

        loss = focal_loss(perfect_output(targets).cls, targets.heatmap)

        assert loss.item() < 1e-3


class TestCompositeLoss:
    """Test the weighted loss assembly."""

    def test_perfect_regression(self, meteor_box, grid):
        """Test exact regression outputs give zero L1."""
        targets = render_batch_targets([[meteor_box]], grid)

        loss = regression_loss(perfect_output(targets), targets)

        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_components(self, meteor_box, grid):
        """Test aux and alignment terms enter with their weights."""
        targets = render_batch_targets([[meteor_box]], grid)
        main = perfect_output(targets)
        aux = perfect_output(targets, confidence=0.0)
        output = ModelOutput(main=main, aux=aux, align_loss=Tensor(2.0))

        config = LossConfig(lambda_align=0.1, lambda_aux=0.5)

        components = compute_losses(output, targets, config).components

        expected = components["det"] + 0.5 * components["aux"] + 0.1 * 2.0
        names = {"heatmap", "regression", "det", "aux", "align", "total"}
        assert set(components) == names
        assert components["total"] == pytest.approx(expected, rel=1e-5)

    def test_missing_components_contribute_nothing(self, meteor_box, grid):
        """Test a LiDAR-only output reduces to the main detection loss."""
        targets = render_batch_targets([[meteor_box]], grid)

        output = ModelOutput(main=perfect_output(targets))

        components = compute_losses(output, targets, LossConfig()).components

        assert "aux" not in components
        assert components["total"] == pytest.approx(components["det"])
