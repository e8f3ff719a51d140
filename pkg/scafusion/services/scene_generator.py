"""Seeded scene synthesis and rendering into dataset samples."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from scafusion.config import SceneConfig
from scafusion.entities.scene import (
    ICOSAHEDRON,
    ConvexObject,
    Meteor,
    Platform,
    Scene,
    SceneSample,
    Terrain,
)
from scafusion.errors import PlacementError
from scafusion.services.renderer import RendererService, SensorRig
from scafusion.value_objects import EgoPose

logger = logging.getLogger(__name__)

PLACEMENT_ATTEMPTS = 100
METEOR_JITTER = 0.3


class SceneGeneratorService:
    """Builds scenes and samples that are pure functions of the config and a seed.

    Args:
        config: Scene and rig parameters.
        renderer_class: Ray caster used to render samples.
    """

    def __init__(
        self,
        config: SceneConfig,
        renderer_class: type[RendererService] = RendererService,
    ):
        self.config = config
        self.rig = SensorRig.from_config(config)
        self.renderer = renderer_class(self.rig)

    def _terrain(self, rng: np.random.Generator) -> Terrain:
        cfg = self.config
        half = cfg.terrain_extent / 2.0

        def features(
            count: int,
            value_range: tuple[float, float],
            width_range: tuple[float, float],
        ) -> np.ndarray:
            return np.column_stack(
                [
                    rng.uniform(-half, half, count),
                    rng.uniform(-half, half, count),
                    rng.uniform(*value_range, count),
                    rng.uniform(*width_range, count),
                ]
            )

        bumps = features(cfg.bump_count, cfg.bump_height_range, cfg.bump_sigma_range)
        craters = features(
            cfg.crater_count, cfg.crater_depth_range, cfg.crater_radius_range
        )
        return Terrain(bumps, craters)

    def _rest_height(
        self,
        terrain: Terrain,
        position: tuple[float, float],
        size: tuple[float, float, float],
        yaw: float,
    ) -> float:
        """Lowest ground under the footprint corners and centre.

        Objects rest on it, so none of them floats.
        """
        c, s = math.cos(yaw), math.sin(yaw)
        half_l, half_w = size[0] / 2.0, size[1] / 2.0
        x, y = position
        signs = [(a, b) for a in (-1, 1) for b in (-1, 1)]
        xs = [x] + [x + c * a * half_l - s * b * half_w for a, b in signs]
        ys = [y] + [y + s * a * half_l + c * b * half_w for a, b in signs]
        return float(terrain.height(np.array(xs), np.array(ys)).min())

    def _place(
        self,
        rng: np.random.Generator,
        terrain: Terrain,
        placed: list[ConvexObject],
        kind: type[ConvexObject],
    ) -> ConvexObject:
        cfg = self.config
        for _ in range(PLACEMENT_ATTEMPTS):
            half_width = cfg.placement_half_width
            position = (
                rng.uniform(*cfg.placement_x_range),
                rng.uniform(-half_width, half_width),
            )
            yaw = rng.uniform(-math.pi, math.pi)
            if kind is Platform:
                length, width = rng.uniform(*cfg.platform_size_range, 2)
                size = (length, width, rng.uniform(*cfg.platform_height_range))
                candidate = Platform(len(placed), position, 0.0, size, yaw)
            else:
                size = tuple(rng.uniform(*cfg.meteor_size_range, 3))
                jitter = rng.uniform(1.0 - METEOR_JITTER, 1.0, len(ICOSAHEDRON))
                candidate = Meteor(len(placed), position, 0.0, size, yaw, jitter)
            reach = candidate.footprint_radius + cfg.min_object_gap
            clear = all(
                math.dist(candidate.position, other.position)
                > reach + other.footprint_radius
                for other in placed
            )
            if clear:
                base_z = self._rest_height(terrain, position, candidate.box.size, yaw)
                if kind is Platform:
                    return Platform(len(placed), position, base_z, size, yaw)
                return Meteor(len(placed), position, base_z, size, yaw, jitter)
        raise PlacementError(
            f"could not place {kind.__name__} #{len(placed)} without overlap"
            f" after {PLACEMENT_ATTEMPTS} attempts; "
            "loosen scene.placement_half_width (or scene.min_object_gap)"
        )

    def generate_scene(self, seed: int) -> Scene:
        """Terrain, platforms then meteors, ego resting on the ground at the origin.

        Raises:
            PlacementError: If an object cannot be placed without overlap.
        """
        cfg = self.config
        rng = np.random.default_rng(seed)
        terrain = self._terrain(rng)
        placed: list[ConvexObject] = []
        low, high = cfg.platform_count_range
        n_platforms = int(rng.integers(low, high + 1))
        low, high = cfg.meteor_count_range
        n_meteors = int(rng.integers(low, high + 1))
        for kind, count in ((Platform, n_platforms), (Meteor, n_meteors)):
            for _ in range(count):
                placed.append(self._place(rng, terrain, placed, kind))
        light_elevation = float(rng.uniform(*cfg.light_elevation_range))
        ego = EgoPose(0.0, 0.0, float(terrain.height(0.0, 0.0)), 0.0)
        return Scene(terrain, tuple(placed), ego, light_elevation, cfg.light_azimuth)

    def generate_sample(self, token: str, seed: int) -> SceneSample:
        scene_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
        scene = self.generate_scene(int(scene_seed.generate_state(1)[0]))
        noise = np.random.default_rng(noise_seed)
        point_cloud = self.renderer.render_lidar(scene, noise)
        image, depth = self.renderer.render_camera(scene)
        logger.debug(
            "sample %s: %d points, %d objects",
            token,
            len(point_cloud),
            len(scene.objects),
        )
        return SceneSample(
            token=token,
            point_cloud=point_cloud,
            image=image,
            depth=depth,
            calib=self.rig.calib,
            ego=scene.ego,
            boxes=tuple(scene.gt_boxes()),
            light_elevation=scene.light_elevation,
        )


def sample_seeds(seed: int, count: int) -> list[int]:
    """Independent per-sample seeds derived from one root seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


def sample_token(index: int) -> str:
    return f"sample_{index:05d}"


def _generate_one(args: tuple[SceneConfig, str, int]) -> SceneSample:
    config, token, seed = args
    return SceneGeneratorService(config).generate_sample(token, seed)


def generate_samples(
    config: SceneConfig, count: int, workers: int = 0
) -> list[SceneSample]:
    """Render ``count`` samples; ``workers > 0`` spreads them over a process pool.

    The result does not depend on ``workers``.
    """
    seeds = sample_seeds(config.seed, count)
    jobs = [(config, sample_token(i), seed) for i, seed in enumerate(seeds)]
    if workers > 0:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_generate_one, jobs))
    service = SceneGeneratorService(config)
    return [service.generate_sample(token, seed) for _, token, seed in jobs]
