"""Procedural lunar scene: analytic terrain plus convex objects, in the world frame."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from scafusion.value_objects import (
    CLASS_NAMES,
    Box3D,
    CameraCalib,
    EgoPose,
    PointCloud,
)

METEOR, PLATFORM = CLASS_NAMES.index("Meteor"), CLASS_NAMES.index("Platform")
TERRAIN_ID = -1
NO_HIT_ID = -2

TERRAIN_ALBEDO = (0.55, 0.55, 0.52)
TERRAIN_INTENSITY = 0.3


def _icosahedron() -> np.ndarray:
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    vertices = []
    for a in (-1.0, 1.0):
        for b in (-phi, phi):
            vertices += [(0.0, a, b), (a, b, 0.0), (b, 0.0, a)]
    vertices = np.array(vertices)
    return vertices / np.linalg.norm(vertices, axis=1, keepdims=True)


ICOSAHEDRON = _icosahedron()


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class Terrain:
    """Heightfield made of Gaussian bumps and Gaussian depressions (craters).

    Args:
        bumps: ``K x 4`` rows of (x, y, height, sigma).
        craters: ``K x 4`` rows of (x, y, depth, radius).
    """

    def __init__(self, bumps: np.ndarray, craters: np.ndarray):
        self.__bumps = np.asarray(bumps, dtype=np.float64).reshape(-1, 4)
        self.__craters = np.asarray(craters, dtype=np.float64).reshape(-1, 4)

    @property
    def bumps(self) -> np.ndarray:
        return self.__bumps

    @property
    def craters(self) -> np.ndarray:
        return self.__craters

    def _terms(
        self, x: np.ndarray, y: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        craters = self.__craters * [1.0, 1.0, -1.0, 1.0]
        features = np.concatenate([self.__bumps, craters])
        dx = x[..., None] - features[:, 0]
        dy = y[..., None] - features[:, 1]
        sigma2 = features[:, 3] ** 2
        value = features[:, 2] * np.exp(-(dx**2 + dy**2) / (2.0 * sigma2))
        return value, dx / sigma2, dy / sigma2

    def height(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        if not (len(self.__bumps) + len(self.__craters)):
            return np.zeros(np.broadcast(x, y).shape)
        value, _, _ = self._terms(x, y)
        return value.sum(axis=-1)

    def normal(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Unit surface normal (..., 3), pointing up."""
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        shape = np.broadcast(x, y).shape
        if not (len(self.__bumps) + len(self.__craters)):
            return np.broadcast_to(np.array([0.0, 0.0, 1.0]), shape + (3,)).copy()
        value, gx, gy = self._terms(x, y)
        dh_dx = -(value * gx).sum(axis=-1)
        dh_dy = -(value * gy).sum(axis=-1)
        normal = np.stack([-dh_dx, -dh_dy, np.ones(shape)], axis=-1)
        return normal / np.linalg.norm(normal, axis=-1, keepdims=True)


class ConvexObject:
    """Object bounded by half-spaces ``n . p <= d``.

    Args:
        identifier: Index of the object in its scene, used as the LiDAR hit id.
        position: World (x, y) of the footprint centre.
        base_z: World z the object rests on.
        size: Nominal length, width, height in meters.
        yaw: Heading in radians.
    """

    label: int = -1
    albedo: tuple[float, float, float] = (1.0, 1.0, 1.0)
    intensity: float = 0.5

    def __init__(
        self,
        identifier: int,
        position: tuple[float, float],
        base_z: float,
        size: tuple[float, float, float],
        yaw: float,
    ):
        self.identifier = identifier
        self.position = (float(position[0]), float(position[1]))
        self.base_z = float(base_z)
        self.size = tuple(float(s) for s in size)
        self.yaw = float(yaw)
        local = self._local_vertices()
        rotation = yaw_matrix(self.yaw)
        offset = np.array(
            [self.position[0], self.position[1], self.base_z - local[:, 2].min()]
        )
        self.vertices = local @ rotation.T + offset
        self.normals, self.offsets = self._build_planes(local, rotation, offset)
        low, high = local.min(axis=0), local.max(axis=0)
        centre = (low + high) / 2.0 @ rotation.T + offset
        self.box = Box3D(centre, high - low, self.yaw, self.label)

    def _local_vertices(self) -> np.ndarray:
        """Vertices in the object frame (yaw 0, origin at the footprint centre).

        Raises:
            NotImplementedError: Must be implemented by subclasses.
        """
        raise NotImplementedError()

    def _build_planes(
        self, local: np.ndarray, rotation: np.ndarray, offset: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        hull = ConvexHull(local)
        normals = hull.equations[:, :3] @ rotation.T
        offsets = -hull.equations[:, 3] + normals @ offset
        return normals, offsets

    @property
    def footprint_radius(self) -> float:
        return 0.5 * math.hypot(self.box.size[0], self.box.size[1])

    def contains(self, points: np.ndarray, tolerance: float = 1e-6) -> np.ndarray:
        return np.all(points @ self.normals.T <= self.offsets + tolerance, axis=-1)

    def intersect(
        self, origins: np.ndarray, directions: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Entry distance and outward normal per ray; ``inf`` where the ray misses.

        Rays starting inside the object report a miss.
        """
        denom = directions @ self.normals.T
        numer = self.offsets - origins @ self.normals.T
        with np.errstate(divide="ignore", invalid="ignore"):
            t = numer / denom
        entering = denom < 0
        leaving = denom > 0
        t_enter = np.where(entering, t, -np.inf)
        t_exit = np.where(leaving, t, np.inf)
        parallel_outside = np.any((denom == 0) & (numer < 0), axis=1)
        enter = t_enter.max(axis=1)
        exit_ = t_exit.min(axis=1)
        hit = (enter <= exit_) & (enter > 0) & ~parallel_outside
        distance = np.where(hit, enter, np.inf)
        normal = self.normals[np.argmax(t_enter, axis=1)]
        return distance, normal


class Meteor(ConvexObject):
    """Small irregular rock: a radially jittered icosahedron at a sampled size."""

    label = METEOR
    albedo = (0.35, 0.3, 0.25)
    intensity = 0.6

    def __init__(
        self,
        identifier: int,
        position: tuple[float, float],
        base_z: float,
        size: tuple[float, float, float],
        yaw: float,
        jitter: np.ndarray,
    ):
        self.jitter = np.asarray(jitter, dtype=np.float64).reshape(len(ICOSAHEDRON))
        super().__init__(identifier, position, base_z, size, yaw)

    def _local_vertices(self) -> np.ndarray:
        return ICOSAHEDRON * self.jitter[:, None] * (np.array(self.size) / 2.0)


class Platform(ConvexObject):
    """Large regular cuboid."""

    label = PLATFORM
    albedo = (0.8, 0.8, 0.85)
    intensity = 0.9

    def _local_vertices(self) -> np.ndarray:
        signs = (-1.0, 1.0)
        corners = np.array([[x, y, z] for x in signs for y in signs for z in signs])
        return corners * (np.array(self.size) / 2.0)


@dataclass(frozen=True)
class Scene:
    """Generated world: terrain, objects, ego pose and lighting.

    Attributes:
        terrain: Ground heightfield.
        objects: Meteors and platforms; ``objects[k].identifier == k``.
        ego: Robot pose in the world; the ego origin sits on the ground.
        light_elevation: Sun elevation in degrees.
        light_azimuth: Sun azimuth in degrees.
    """

    terrain: Terrain
    objects: tuple[ConvexObject, ...]
    ego: EgoPose
    light_elevation: float
    light_azimuth: float

    @property
    def light_direction(self) -> np.ndarray:
        """Unit vector towards the light, world frame."""
        elevation = math.radians(self.light_elevation)
        azimuth = math.radians(self.light_azimuth)
        return np.array(
            [
                math.cos(elevation) * math.cos(azimuth),
                math.cos(elevation) * math.sin(azimuth),
                math.sin(elevation),
            ]
        )

    def gt_boxes(self) -> list[Box3D]:
        """Ground-truth boxes in the ego frame."""
        boxes = []
        for obj in self.objects:
            centre = self.ego.world_to_ego(np.array(obj.box.center))
            yaw = obj.box.yaw - self.ego.yaw
            boxes.append(Box3D(centre, obj.box.size, yaw, obj.label))
        return boxes


@dataclass(frozen=True, eq=False)
class SceneSample:
    """One keyframe as stored on disk.

    Attributes:
        token: Unique sample name.
        point_cloud: LiDAR sweep in the ego frame, with hit ids when just rendered.
        image: ``H x W x 3`` uint8 RGB.
        depth: ``H x W`` float32 optical-axis depth, 0 where nothing was hit.
        calib: Front camera calibration at the stored image size.
        ego: Robot pose in the world.
        boxes: Ground-truth boxes in the ego frame.
        light_elevation: Sun elevation used for shading, degrees.
    """

    token: str
    point_cloud: PointCloud
    image: np.ndarray
    depth: np.ndarray
    calib: CameraCalib
    ego: EgoPose
    boxes: tuple[Box3D, ...]
    light_elevation: float
