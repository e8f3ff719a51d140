import math

import numpy as np
import pytest

from scafusion.config import SceneConfig
from scafusion.entities.scene import (
    NO_HIT_ID,
    TERRAIN_ID,
    TERRAIN_INTENSITY,
    Platform,
    Scene,
    Terrain,
)
from scafusion.services.renderer import RendererService, SensorRig, camera_calib
from scafusion.value_objects import EgoPose

FLAT = Terrain(np.zeros((0, 4)), np.zeros((0, 4)))
ORIGIN = EgoPose(0.0, 0.0, 0.0, 0.0)


@pytest.fixture
def rig():
    return SensorRig(
        calib=camera_calib(SceneConfig()).scaled(1 / 8),
        lidar_height=1.0,
        ring_elevations=(-30.0, -10.0, -2.0),
        azimuth_steps=4,
        max_range=10.0,
        intensity_noise=0.0,
    )


@pytest.fixture
def flat_scene():
    return Scene(FLAT, (), ORIGIN, 30.0, 0.0)


class TestCameraCalib:
    """Test the front camera of the rig."""

    def test_desk_intrinsics(self):
        """Test a 90 degree field of view over 320 pixels gives focal length 160."""
        calib = camera_calib(SceneConfig())

        assert (calib.width, calib.height) == (320, 192)
        assert calib.fx == pytest.approx(160.0)
        assert (calib.cx, calib.cy) == (159.5, 95.5)

    def test_optical_axis_pitched_down(self):
        """Test the optical axis looks forward and down by the pitch angle."""
        calib = camera_calib(SceneConfig(camera_pitch=8.0))

        axis = calib.rotation @ np.array([0.0, 0.0, 1.0])

        pitch = math.radians(8.0)
        np.testing.assert_allclose(
            axis, [math.cos(pitch), 0.0, -math.sin(pitch)], atol=1e-12
        )


class TestSensorRig:
    """Test the LiDAR scan pattern."""

    def test_directions(self, rig):
        """Test rays are unit vectors ordered ring by ring."""
        directions = rig.lidar_directions()

        assert directions.shape == (12, 3)
        np.testing.assert_allclose(np.linalg.norm(directions, axis=1), 1.0)
        horizontal = math.cos(math.radians(30))
        np.testing.assert_allclose(directions[0], [horizontal, 0.0, -0.5], atol=1e-12)
        np.testing.assert_allclose(directions[1], [0.0, horizontal, -0.5], atol=1e-12)

    def test_from_config(self):
        """Test rings span the configured elevation range."""
        config = SceneConfig(lidar_rings=4, lidar_elevation_range=(-30.0, 0.0))

        rig = SensorRig.from_config(config)

        assert rig.ring_elevations == (-30.0, -20.0, -10.0, 0.0)

    @pytest.mark.parametrize("elevations", [(), (-10.0, -10.0), (0.0, -5.0)])
    def test_invalid_rings(self, rig, elevations):
        """Test rings have to exist and strictly increase."""
        with pytest.raises(ValueError):
            SensorRig(rig.calib, 1.0, elevations, 4, 10.0, 0.0)


class TestRendererService:
    """Test ray casting against terrain and objects."""

    def test_lidar_on_flat_ground(self, rig, flat_scene):
        """Test rings land at height / tan(elevation) and far rings return nothing."""
        cloud = RendererService(rig).render_lidar(flat_scene, np.random.default_rng(0))

        assert len(cloud) == 8
        radius = np.hypot(cloud.xyz[:, 0], cloud.xyz[:, 1])
        near, far = (1.0 / math.tan(math.radians(e)) for e in (30.0, 10.0))
        np.testing.assert_allclose(radius[:4], near, rtol=1e-5)
        np.testing.assert_allclose(radius[4:], far, rtol=1e-5)
        np.testing.assert_allclose(cloud.xyz[:, 2], 0.0, atol=1e-5)
        np.testing.assert_allclose(cloud.intensity, TERRAIN_INTENSITY, rtol=1e-6)
        assert set(cloud.hit_ids.tolist()) == {TERRAIN_ID}

    def test_object_hit(self, rig):
        """Test a horizontal ray stops at the platform face."""
        platform = Platform(0, (5.0, 0.0), 0.0, (2.0, 2.0, 1.0), 0.0)
        scene = Scene(FLAT, (platform,), ORIGIN, 30.0, 0.0)
        origin, direction = np.array([[0.0, 0.0, 0.5]]), np.array([[1.0, 0.0, 0.0]])

        hits = RendererService(rig).cast(scene, origin, direction)

        assert hits.distance[0] == pytest.approx(4.0)
        assert hits.hit_id[0] == 0
        np.testing.assert_allclose(hits.normal[0], [-1.0, 0.0, 0.0], atol=1e-9)

    def test_miss(self, rig, flat_scene):
        """Test a ray pointing up hits nothing."""
        up = np.array([[0.0, 0.0, 1.0]])

        hits = RendererService(rig).cast(flat_scene, up, up)

        assert hits.distance[0] == math.inf
        assert hits.hit_id[0] == NO_HIT_ID
        assert not hits.hit[0]

    def test_chunking_does_not_change_hits(self, rig, flat_scene):
        """Test small chunks give the same result as a single pass."""
        directions = rig.lidar_directions()
        origins = np.zeros_like(directions) + [0.0, 0.0, 1.0]

        whole = RendererService(rig).cast(flat_scene, origins, directions)
        chunked = RendererService(rig, chunk_size=5).cast(
            flat_scene, origins, directions
        )

        np.testing.assert_array_equal(whole.distance, chunked.distance)
        np.testing.assert_array_equal(whole.hit_id, chunked.hit_id)

    def test_camera_depth_lies_on_ground(self, rig, flat_scene):
        """Test hit pixels unproject onto the ground plane and sky pixels stay empty."""
        image, depth = RendererService(rig).render_camera(flat_scene)
        calib = rig.calib

        assert image.shape == (calib.height, calib.width, 3)
        assert depth.dtype == np.float32
        assert np.all(depth[0] == 0.0)
        assert np.all(depth[-1] > 0.0)
        v, u = np.nonzero(depth)
        points = calib.unproject(
            u.astype(float), v.astype(float), depth[v, u].astype(float)
        )
        np.testing.assert_allclose(points[:, 2], 0.0, atol=1e-4)
        assert np.all(image[depth == 0.0] == 0)

    def test_lambert_shading(self, rig, flat_scene):
        """Test flat ground under a 30 degree sun gets ambient plus half the diffuse."""
        image, _ = RendererService(rig).render_camera(flat_scene)

        assert image[-1, 0].tolist() == [77, 77, 73]

    def test_marker_lands_on_calibrated_pixel(self, rig, flat_scene):
        """Test a marker about one pixel wide lands where its calibration projects."""
        marker = Platform(0, (4.0, 0.5), 0.0, (0.3, 0.3, 0.3), 0.0)
        scene = Scene(FLAT, (marker,), ORIGIN, 30.0, 180.0)
        face_centre = rig.calib.ego_to_camera(np.array([3.85, 0.5, 0.15]))
        u, v = np.round(rig.calib.project(face_centre)).astype(int)

        _, flat_depth = RendererService(rig).render_camera(flat_scene)
        image, depth = RendererService(rig).render_camera(scene)

        changed = np.argwhere(depth != flat_depth)
        assert [v, u] in changed.tolist()
        assert len(changed) <= 9
        assert depth[v, u] == pytest.approx(face_centre[2], abs=0.05)
        assert depth[v, u] < flat_depth[v, u]
        assert image[v, u].tolist() == [179, 179, 191]

    def test_brightness_rises_with_light_elevation(self, rig):
        """Test flat ground gets brighter as the sun climbs."""
        renderer = RendererService(rig)
        brightness = []

        for elevation in (5.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0):
            scene = Scene(FLAT, (), ORIGIN, elevation, 0.0)
            image, depth = renderer.render_camera(scene)
            brightness.append(image[depth > 0].astype(float).mean())

        assert all(b >= a for a, b in zip(brightness, brightness[1:]))
        assert brightness[-1] > 2.0 * brightness[0]
