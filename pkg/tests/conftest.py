import numpy as np
import pytest

from scafusion.config import (
    AblationConfig,
    DatasetConfig,
    GridConfig,
    ModelConfig,
    OptimizerConfig,
    RunConfig,
    SceneConfig,
)
from scafusion.entities.scafusion_model import ModelInput
from scafusion.services.renderer import camera_calib
from scafusion.services.scene_generator import generate_samples
from scafusion.value_objects import Box3D, BEVGridSpec, PointCloud


def pytest_configure(config):
    config.addinivalue_line(
        "markers", 'slow: long optimisation runs (deselect with -m "not slow")'
    )


@pytest.fixture
def tiny_backbone_args():
    """Stage widths and heads small enough for quick forward passes."""
    return (8, 16, 32), (1, 2, 2)


@pytest.fixture(scope="session")
def tiny_scene_config():
    """Sparse LiDAR and a short ray range."""
    return SceneConfig(
        seed=3,
        lidar_rings=8,
        lidar_azimuth_steps=90,
        max_range=24.0,
        bump_count=3,
        crater_count=1,
    )


@pytest.fixture(scope="session")
def tiny_config(tiny_scene_config):
    """Run config with a 16 x 16 BEV grid, narrow networks and two training steps."""
    return RunConfig(
        out="runs/test",
        dataset=DatasetConfig(num_samples=2),
        scene=tiny_scene_config,
        grid=GridConfig(cell_size=2.0),
        model=ModelConfig(
            widths=(8, 16, 32),
            heads=(1, 2, 2),
            neck_channels=8,
            depth_bins=4,
            context_channels=4,
            lidar_channels=8,
            max_points=8,
            fused_channels=8,
            aux_channels=4,
            ctr_channels=4,
            input_downsample=4,
        ),
        optimizer=OptimizerConfig(steps=2, batch_size=2, log_every=1),
        ablation=AblationConfig(seeds=(0,), num_samples=2),
    )


@pytest.fixture
def grid():
    """8 m x 8 m grid of 1 m cells ahead of the ego."""
    return BEVGridSpec((0.0, 8.0), (-4.0, 4.0), 1.0, (-2.0, 2.0))


@pytest.fixture(scope="session")
def tiny_samples(tiny_scene_config):
    """Two rendered samples shared by the slower tests."""
    return generate_samples(tiny_scene_config, 2)


@pytest.fixture
def model_input(tiny_config):
    """Random two-sample batch at the tiny model resolution (80 x 48)."""
    rng = np.random.default_rng(0)
    scale = 1.0 / tiny_config.model.input_downsample
    calib = camera_calib(tiny_config.scene).scaled(scale)
    points = np.column_stack(
        [
            rng.uniform(1, 30, 300),
            rng.uniform(-15, 15, 300),
            rng.uniform(-1, 1, 300),
            rng.uniform(0, 1, 300),
        ]
    )
    size = (calib.height, calib.width)
    return ModelInput(
        images=rng.uniform(0, 1, (2, 3, *size)).astype(np.float32),
        depth_maps=rng.uniform(0, 20, (2, *size)).astype(np.float32),
        calibs=(calib, calib),
        point_clouds=(PointCloud(points), PointCloud(points[:150])),
    )


@pytest.fixture
def meteor_box():
    """Meteor 5 m ahead, slightly to the left."""
    return Box3D((5.0, 1.0, 0.3), (0.6, 0.5, 0.6), 0.3, 0)


@pytest.fixture
def platform_box():
    """Platform 10 m ahead, to the right."""
    return Box3D((10.0, -3.0, 0.5), (2.0, 2.5, 1.0), -0.4, 1)

