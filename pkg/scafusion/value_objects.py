import math
from typing import Any, Sequence

import numpy as np

CLASS_NAMES: tuple[str, ...] = ("Meteor", "Platform")


def _readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


class Box3D:
    """Immutable value object representing an oriented 3D box.

    Args:
        center: Box center (x, y, z) in meters.
        size: Length, width, height in meters.
        yaw: Heading around +z in radians.
        label: Class id, an index into ``CLASS_NAMES``.
        score: Optional detection confidence.

    Raises:
        ValueError: If a size is not positive or a value is not finite.
    """

    def __init__(
        self,
        center: Sequence[float],
        size: Sequence[float],
        yaw: float,
        label: int,
        score: float | None = None,
    ):
        center = tuple(float(v) for v in center)
        size = tuple(float(v) for v in size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError(
                f"center and size need 3 entries - not {len(center)}/{len(size)}"
            )
        if not all(math.isfinite(v) for v in center + size + (float(yaw),)):
            raise ValueError(
                f"box values have to be finite - not {center}, {size}, {yaw}"
            )
        if min(size) <= 0:
            raise ValueError(f"box sizes have to be positive - not {size}")
        self.__center = center
        self.__size = size
        self.__yaw = float(yaw)
        self.__label = int(label)
        self.__score = None if score is None else float(score)

    @property
    def center(self) -> tuple[float, float, float]:
        return self.__center

    @property
    def size(self) -> tuple[float, float, float]:
        """Get length, width, height."""
        return self.__size

    @property
    def yaw(self) -> float:
        return self.__yaw

    @property
    def label(self) -> int:
        return self.__label

    @property
    def score(self) -> float | None:
        return self.__score

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.__label]

    @property
    def volume(self) -> float:
        length, width, height = self.__size
        return length * width * height

    def with_score(self, score: float) -> "Box3D":
        """Return a copy carrying a detection score."""
        return Box3D(self.__center, self.__size, self.__yaw, self.__label, score)

    def distance_2d(self, other: "Box3D") -> float:
        """Ground-plane distance between two box centers in meters."""
        return math.hypot(
            self.__center[0] - other.center[0], self.__center[1] - other.center[1]
        )

    def bev_corners(self) -> np.ndarray:
        """Get the four ground-plane corners (4 x 2), counter-clockwise."""
        length, width, _ = self.__size
        local = np.array(
            [[length, width], [-length, width], [-length, -width], [length, -width]]
        ) / 2.0
        c, s = math.cos(self.__yaw), math.sin(self.__yaw)
        rotation = np.array([[c, -s], [s, c]])
        return local @ rotation.T + np.array(self.__center[:2])

    def to_dict(self) -> dict[str, Any]:
        data = {
            "center_m": list(self.__center),
            "size_lwh_m": list(self.__size),
            "yaw_rad": self.__yaw,
            "class": self.class_name,
        }
        if self.__score is not None:
            data["score"] = self.__score
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Box3D":
        """Build a box from its ``to_dict`` form.

        Raises:
            ValueError: If the class name is unknown.
        """
        name = data["class"]
        if name not in CLASS_NAMES:
            raise ValueError(f"class has to be one of {CLASS_NAMES} - not {name!r}")
        return cls(
            data["center_m"],
            data["size_lwh_m"],
            data["yaw_rad"],
            CLASS_NAMES.index(name),
            data.get("score"),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Box3D):
            return NotImplemented
        return (
            self.__center == other.center
            and self.__size == other.size
            and self.__yaw == other.yaw
            and self.__label == other.label
            and self.__score == other.score
        )

    def __hash__(self) -> int:
        return hash(
            (self.__center, self.__size, self.__yaw, self.__label, self.__score)
        )

    def __repr__(self) -> str:
        return (
            f"Box3D({self.class_name}, center={self.__center},"
            f" size={self.__size}, yaw={self.__yaw:.3f})"
        )


class CameraCalib:
    """Immutable pinhole camera calibration.

    The camera frame is x right, y down, z forward; ``rotation``/``translation`` map
    camera coordinates into the ego frame (x forward, y left, z up).

    Args:
        fx: Focal length along u in pixels.
        fy: Focal length along v in pixels.
        cx: Principal point u in pixels.
        cy: Principal point v in pixels.
        width: Image width in pixels.
        height: Image height in pixels.
        rotation: 3 x 3 camera-to-ego rotation.
        translation: Camera origin in the ego frame, meters.

    Raises:
        ValueError: If focal lengths are not positive or the rotation is not
            orthonormal.
    """

    def __init__(
        self,
        fx: float,
        fy: float,
        cx: float,
        cy: float,
        width: int,
        height: int,
        rotation: Sequence[Sequence[float]] | np.ndarray,
        translation: Sequence[float] | np.ndarray,
    ):
        if fx <= 0 or fy <= 0:
            raise ValueError(
                f"focal lengths have to be positive - not fx={fx}, fy={fy}"
            )
        if width <= 0 or height <= 0:
            raise ValueError(f"image size has to be positive - not {width}x{height}")
        rotation = np.array(rotation, dtype=np.float64).reshape(3, 3)
        if np.max(np.abs(rotation @ rotation.T - np.eye(3))) > 1e-6:
            raise ValueError("rotation has to be orthonormal within 1e-6")
        self.__fx, self.__fy = float(fx), float(fy)
        self.__cx, self.__cy = float(cx), float(cy)
        self.__width, self.__height = int(width), int(height)
        self.__rotation = _readonly(rotation)
        self.__translation = _readonly(
            np.array(translation, dtype=np.float64).reshape(3)
        )

    @property
    def fx(self) -> float:
        return self.__fx

    @property
    def fy(self) -> float:
        return self.__fy

    @property
    def cx(self) -> float:
        return self.__cx

    @property
    def cy(self) -> float:
        return self.__cy

    @property
    def width(self) -> int:
        return self.__width

    @property
    def height(self) -> int:
        return self.__height

    @property
    def rotation(self) -> np.ndarray:
        return self.__rotation

    @property
    def translation(self) -> np.ndarray:
        return self.__translation

    def scaled(self, factor: float) -> "CameraCalib":
        """Calibration of the same camera after resizing the image by ``factor``.

        Pixel centers follow the half-pixel convention,
        ``u' = (u + 0.5) * factor - 0.5``.
        """
        return CameraCalib(
            self.__fx * factor,
            self.__fy * factor,
            (self.__cx + 0.5) * factor - 0.5,
            (self.__cy + 0.5) * factor - 0.5,
            round(self.__width * factor),
            round(self.__height * factor),
            self.__rotation,
            self.__translation,
        )

    def unproject(self, u: np.ndarray, v: np.ndarray, depth: np.ndarray) -> np.ndarray:
        """Lift pixels at a given optical-axis depth into ego-frame points (..., 3)."""
        x = (u - self.__cx) * depth / self.__fx
        y = (v - self.__cy) * depth / self.__fy
        camera = np.stack(np.broadcast_arrays(x, y, depth), axis=-1)
        return camera @ self.__rotation.T + self.__translation

    def ego_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (points - self.__translation) @ self.__rotation

    def project(self, points_camera: np.ndarray) -> np.ndarray:
        """Project camera-frame points (..., 3) to pixel coordinates (..., 2)."""
        z = points_camera[..., 2]
        u = self.__fx * points_camera[..., 0] / z + self.__cx
        v = self.__fy * points_camera[..., 1] / z + self.__cy
        return np.stack([u, v], axis=-1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "fx_px": self.__fx,
            "fy_px": self.__fy,
            "cx_px": self.__cx,
            "cy_px": self.__cy,
            "width_px": self.__width,
            "height_px": self.__height,
            "rotation_cam_to_ego": self.__rotation.tolist(),
            "translation_m": self.__translation.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CameraCalib":
        return cls(
            data["fx_px"],
            data["fy_px"],
            data["cx_px"],
            data["cy_px"],
            data["width_px"],
            data["height_px"],
            data["rotation_cam_to_ego"],
            data["translation_m"],
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CameraCalib):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


class BEVGridSpec:
    """Immutable bird's-eye-view raster definition.

    Rows index x (forward), columns index y (left); ``H_bev = nx``, ``W_bev = ny``.

    Args:
        x_range: (min, max) along x in meters.
        y_range: (min, max) along y in meters.
        cell_size: Cell edge in meters.
        z_range: (min, max) height band kept when pooling, meters.

    Raises:
        ValueError: If a range is empty or not divisible by the cell size.
    """

    def __init__(
        self,
        x_range: Sequence[float],
        y_range: Sequence[float],
        cell_size: float,
        z_range: Sequence[float] = (-3.0, 5.0),
    ):
        if cell_size <= 0:
            raise ValueError(f"cell_size has to be positive - not {cell_size}")
        extents = []
        for name, (low, high) in (("x_range", x_range), ("y_range", y_range)):
            cells = (high - low) / cell_size
            if high <= low or abs(cells - round(cells)) > 1e-6:
                raise ValueError(
                    f"{name} {low}..{high} has to be a positive multiple"
                    f" of cell_size {cell_size}"
                )
            extents.append(int(round(cells)))
        if z_range[1] <= z_range[0]:
            raise ValueError(f"z_range has to be increasing - not {tuple(z_range)}")
        self.__x_range = (float(x_range[0]), float(x_range[1]))
        self.__y_range = (float(y_range[0]), float(y_range[1]))
        self.__z_range = (float(z_range[0]), float(z_range[1]))
        self.__cell_size = float(cell_size)
        self.__nx, self.__ny = extents

    @property
    def x_range(self) -> tuple[float, float]:
        return self.__x_range

    @property
    def y_range(self) -> tuple[float, float]:
        return self.__y_range

    @property
    def z_range(self) -> tuple[float, float]:
        return self.__z_range

    @property
    def cell_size(self) -> float:
        return self.__cell_size

    @property
    def height(self) -> int:
        """Get ``H_bev``, the number of cells along x."""
        return self.__nx

    @property
    def width(self) -> int:
        """Get ``W_bev``, the number of cells along y."""
        return self.__ny

    @property
    def shape(self) -> tuple[int, int]:
        return self.__nx, self.__ny

    def cell_coords(
        self, x: np.ndarray, y: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Integer cell coordinates ``floor((p - min) / cell)`` (unchecked)."""
        i = np.floor((np.asarray(x) - self.__x_range[0]) / self.__cell_size)
        j = np.floor((np.asarray(y) - self.__y_range[0]) / self.__cell_size)
        return i.astype(np.int64), j.astype(np.int64)

    def flat_index(self, points: np.ndarray, use_z: bool = True) -> np.ndarray:
        """Flat cell index of each point (..., 3), ``-1`` for points outside the grid.

        Args:
            points: Points in the ego frame.
            use_z: Whether to drop points outside ``z_range``.
        """
        i, j = self.cell_coords(points[..., 0], points[..., 1])
        inside = (i >= 0) & (i < self.__nx) & (j >= 0) & (j < self.__ny)
        if use_z:
            z = points[..., 2]
            inside &= (z >= self.__z_range[0]) & (z < self.__z_range[1])
        return np.where(inside, i * self.__ny + j, -1)

    def cell_center(
        self, i: np.ndarray | int, j: np.ndarray | int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Ground-plane coordinates of a cell center."""
        x = self.__x_range[0] + (np.asarray(i) + 0.5) * self.__cell_size
        y = self.__y_range[0] + (np.asarray(j) + 0.5) * self.__cell_size
        return x, y

    def translated(self, dx: float, dy: float) -> "BEVGridSpec":
        return BEVGridSpec(
            (self.__x_range[0] + dx, self.__x_range[1] + dx),
            (self.__y_range[0] + dy, self.__y_range[1] + dy),
            self.__cell_size,
            self.__z_range,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "x_range": list(self.__x_range),
            "y_range": list(self.__y_range),
            "z_range": list(self.__z_range),
            "cell_size": self.__cell_size,
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BEVGridSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


class EgoPose:
    """Immutable planar pose of the robot in the world frame.

    Args:
        x: World x in meters.
        y: World y in meters.
        z: World z of the ego origin in meters.
        yaw: Heading in radians.
    """

    def __init__(self, x: float, y: float, z: float, yaw: float):
        self.__x, self.__y, self.__z = float(x), float(y), float(z)
        self.__yaw = float(yaw)

    @property
    def x(self) -> float:
        return self.__x

    @property
    def y(self) -> float:
        return self.__y

    @property
    def z(self) -> float:
        return self.__z

    @property
    def yaw(self) -> float:
        return self.__yaw

    @property
    def rotation(self) -> np.ndarray:
        """Ego-to-world rotation (3 x 3)."""
        c, s = math.cos(self.__yaw), math.sin(self.__yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.__x, self.__y, self.__z])

    def ego_to_world(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def world_to_ego(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation

    def to_dict(self) -> dict[str, float]:
        return {
            "x_m": self.__x,
            "y_m": self.__y,
            "z_m": self.__z,
            "yaw_rad": self.__yaw,
        }

    @classmethod
    def from_dict(cls, data: dict[str, float]) -> "EgoPose":
        return cls(data["x_m"], data["y_m"], data["z_m"], data["yaw_rad"])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EgoPose):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


class PointCloud:
    """Immutable LiDAR point set.

    Args:
        points: N x 4 array of x, y, z (meters) and intensity in [0, 1].
        hit_ids: Optional debug channel with the scene object hit by each point
            (-1 terrain).

    Raises:
        ValueError: If the array is not N x 4 or holds non-finite values.
    """

    def __init__(self, points: np.ndarray, hit_ids: np.ndarray | None = None):
        if np.size(points):
            points = np.array(points, dtype=np.float32).reshape(-1, 4)
        else:
            points = np.zeros((0, 4), np.float32)
        if not np.all(np.isfinite(points)):
            raise ValueError("point cloud values have to be finite")
        if hit_ids is not None:
            hit_ids = _readonly(np.array(hit_ids, dtype=np.int32).reshape(-1))
            if hit_ids.shape[0] != points.shape[0]:
                raise ValueError(
                    f"hit_ids length {hit_ids.shape[0]} has to match"
                    f" {points.shape[0]} points"
                )
        self.__points = _readonly(points)
        self.__hit_ids = hit_ids

    @property
    def points(self) -> np.ndarray:
        return self.__points

    @property
    def hit_ids(self) -> np.ndarray | None:
        return self.__hit_ids

    @property
    def xyz(self) -> np.ndarray:
        return self.__points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.__points[:, 3]

    def __len__(self) -> int:
        return self.__points.shape[0]
