"""Analytic ray casting of generated scenes into LiDAR sweeps, images and depth maps."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from scafusion.config import SceneConfig
from scafusion.entities.scene import (
    NO_HIT_ID,
    TERRAIN_ALBEDO,
    TERRAIN_ID,
    TERRAIN_INTENSITY,
    Scene,
)
from scafusion.value_objects import CameraCalib, PointCloud

logger = logging.getLogger(__name__)

# camera x right, y down, z forward -> ego x forward, y left, z up
CAMERA_BASE_ROTATION = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
AMBIENT = 0.1
BISECTION_STEPS = 40


def camera_calib(config: SceneConfig) -> CameraCalib:
    """Front camera of the rig, pitched down by ``camera_pitch`` degrees."""
    width, height = config.image_size
    focal = (width / 2.0) / math.tan(math.radians(config.camera_hfov) / 2.0)
    pitch = math.radians(config.camera_pitch)
    c, s = math.cos(pitch), math.sin(pitch)
    pitch_rotation = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return CameraCalib(
        focal,
        focal,
        width / 2.0 - 0.5,
        height / 2.0 - 0.5,
        width,
        height,
        pitch_rotation @ CAMERA_BASE_ROTATION,
        (0.0, 0.0, config.camera_height),
    )


@dataclass(frozen=True)
class SensorRig:
    """Sensor placement and scan pattern, ego frame.

    Attributes:
        calib: Front camera.
        lidar_height: LiDAR origin above the ego origin, meters.
        ring_elevations: One elevation per ring, degrees, strictly increasing.
        azimuth_steps: Rays per ring over a full turn.
        max_range: Rays travelling this far return nothing, meters.
        intensity_noise: Standard deviation added to class intensities.
    """

    calib: CameraCalib
    lidar_height: float
    ring_elevations: tuple[float, ...]
    azimuth_steps: int
    max_range: float
    intensity_noise: float

    def __post_init__(self):
        if not self.ring_elevations:
            raise ValueError("a LiDAR needs at least one ring")
        if np.any(np.diff(self.ring_elevations) <= 0):
            raise ValueError(
                "ring elevations have to be strictly increasing"
                f" - not {self.ring_elevations}"
            )

    @classmethod
    def from_config(cls, config: SceneConfig) -> "SensorRig":
        low, high = config.lidar_elevation_range
        return cls(
            calib=camera_calib(config),
            lidar_height=config.lidar_height,
            ring_elevations=tuple(
                float(e) for e in np.linspace(low, high, config.lidar_rings)
            ),
            azimuth_steps=config.lidar_azimuth_steps,
            max_range=config.max_range,
            intensity_noise=config.intensity_noise,
        )

    def lidar_directions(self) -> np.ndarray:
        """Unit ray directions, ring-major, ego frame, ``rings * azimuth_steps x 3``."""
        elevation = np.radians(np.asarray(self.ring_elevations))[:, None]
        azimuth = 2.0 * np.pi * np.arange(self.azimuth_steps) / self.azimuth_steps
        azimuth = azimuth[None, :]
        directions = np.stack(
            np.broadcast_arrays(
                np.cos(elevation) * np.cos(azimuth),
                np.cos(elevation) * np.sin(azimuth),
                np.sin(elevation),
            ),
            axis=-1,
        )
        return directions.reshape(-1, 3)


@dataclass(frozen=True)
class RayHits:
    """Nearest hit per ray: distance (``inf`` for none), object id and normal."""

    distance: np.ndarray
    hit_id: np.ndarray
    normal: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return np.isfinite(self.distance)


class RendererService:
    """Casts rays against terrain and convex objects.

    Terrain is found by marching plus bisection, objects by half-space clipping.

    Args:
        rig: Sensor placement.
        march_step: Terrain marching step in meters.
        chunk_size: Rays processed per batch.
    """

    def __init__(
        self, rig: SensorRig, march_step: float = 0.25, chunk_size: int = 4096
    ):
        self.rig = rig
        self.march_step = march_step
        self.chunk_size = chunk_size

    def _terrain_hits(
        self, scene: Scene, origins: np.ndarray, directions: np.ndarray
    ) -> np.ndarray:
        count = int(math.ceil(self.rig.max_range / self.march_step))
        steps = np.arange(1, count + 1) * self.march_step
        samples = origins[:, None, :] + steps[None, :, None] * directions[:, None, :]
        ground = scene.terrain.height(samples[..., 0], samples[..., 1])
        above = samples[..., 2] - ground >= 0
        below = ~above
        crossed = below.any(axis=1)
        first = np.argmax(below, axis=1)
        distance = np.full(origins.shape[0], np.inf)
        if not crossed.any():
            return distance
        rows = np.flatnonzero(crossed)
        high = steps[first[rows]]
        low = np.where(first[rows] > 0, steps[np.maximum(first[rows] - 1, 0)], 0.0)
        o, d = origins[rows], directions[rows]
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (low + high)
            point = o + mid[:, None] * d
            is_above = point[:, 2] - scene.terrain.height(point[:, 0], point[:, 1]) >= 0
            low = np.where(is_above, mid, low)
            high = np.where(is_above, high, mid)
        distance[rows] = high
        return distance

    def _cast_chunk(
        self, scene: Scene, origins: np.ndarray, directions: np.ndarray
    ) -> RayHits:
        distance = self._terrain_hits(scene, origins, directions)
        hit_id = np.where(np.isfinite(distance), TERRAIN_ID, NO_HIT_ID)
        travelled = np.where(np.isfinite(distance), distance, 0.0)
        point = origins + travelled[:, None] * directions
        normal = scene.terrain.normal(point[:, 0], point[:, 1])
        for obj in scene.objects:
            obj_distance, obj_normal = obj.intersect(origins, directions)
            closer = obj_distance < distance
            distance = np.where(closer, obj_distance, distance)
            hit_id = np.where(closer, obj.identifier, hit_id)
            normal = np.where(closer[:, None], obj_normal, normal)
        beyond = distance > self.rig.max_range
        distance = np.where(beyond, np.inf, distance)
        hit_id = np.where(beyond, NO_HIT_ID, hit_id)
        return RayHits(distance, hit_id.astype(np.int32), normal)

    def cast(
        self, scene: Scene, origins: np.ndarray, directions: np.ndarray
    ) -> RayHits:
        """Nearest intersection of unit-direction world rays with the scene."""
        chunks = [
            slice(start, start + self.chunk_size)
            for start in range(0, origins.shape[0], self.chunk_size)
        ]
        parts = [
            self._cast_chunk(scene, origins[chunk], directions[chunk])
            for chunk in chunks
        ]
        return RayHits(
            np.concatenate([p.distance for p in parts]),
            np.concatenate([p.hit_id for p in parts]),
            np.concatenate([p.normal for p in parts]),
        )

    def render_lidar(self, scene: Scene, rng: np.random.Generator) -> PointCloud:
        """One sweep in the ego frame; rays reaching ``max_range`` return no point."""
        directions_ego = self.rig.lidar_directions()
        directions = directions_ego @ scene.ego.rotation.T
        origin = scene.ego.ego_to_world(np.array([0.0, 0.0, self.rig.lidar_height]))
        origins = np.broadcast_to(origin, directions.shape)
        hits = self.cast(scene, origins, directions)
        keep = hits.hit
        world = origins[keep] + hits.distance[keep, None] * directions[keep]
        points = scene.ego.world_to_ego(world)
        hit_id = hits.hit_id[keep]
        lookup = np.array(
            [obj.intensity for obj in scene.objects] + [TERRAIN_INTENSITY]
        )
        base = lookup[np.where(hit_id == TERRAIN_ID, len(scene.objects), hit_id)]
        noise = rng.normal(0.0, self.rig.intensity_noise, base.shape)
        intensity = np.clip(base + noise, 0.0, 1.0)
        logger.debug("lidar sweep: %d of %d rays returned", int(keep.sum()), keep.size)
        return PointCloud(np.column_stack([points, intensity]), hit_ids=hit_id)

    def render_camera(self, scene: Scene) -> tuple[np.ndarray, np.ndarray]:
        """Shaded RGB image (uint8) and optical-axis depth (float32, 0 for sky)."""
        calib = self.rig.calib
        v, u = np.meshgrid(
            np.arange(calib.height), np.arange(calib.width), indexing="ij"
        )
        rays_camera = np.stack(
            [(u - calib.cx) / calib.fx, (v - calib.cy) / calib.fy, np.ones(u.shape)],
            axis=-1,
        )
        rays_camera = rays_camera.reshape(-1, 3)
        norm = np.linalg.norm(rays_camera, axis=1)
        rays_ego = (rays_camera / norm[:, None]) @ calib.rotation.T
        directions = rays_ego @ scene.ego.rotation.T
        origin = scene.ego.ego_to_world(calib.translation)
        hits = self.cast(scene, np.broadcast_to(origin, directions.shape), directions)

        depth = np.where(hits.hit, hits.distance / norm, 0.0)
        albedo = np.array(
            [obj.albedo for obj in scene.objects] + [TERRAIN_ALBEDO, (0.0, 0.0, 0.0)]
        )
        index = np.where(hits.hit_id == TERRAIN_ID, len(scene.objects), hits.hit_id)
        index = np.where(hits.hit_id == NO_HIT_ID, len(scene.objects) + 1, index)
        lambert = np.clip(hits.normal @ scene.light_direction, 0.0, None)
        shade = np.where(hits.hit, AMBIENT + (1.0 - AMBIENT) * lambert, 0.0)
        colour = albedo[index] * shade[:, None]
        image = np.round(np.clip(colour, 0.0, 1.0) * 255.0).astype(np.uint8)
        shape = (calib.height, calib.width)
        return image.reshape(shape + (3,)), depth.reshape(shape).astype(np.float32)
