"""Run configuration: one JSON document parsed into nested frozen dataclasses.

Every key has a default; unknown keys, wrong types and out-of-range values raise
``ConfigError`` carrying the dotted key path.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from scafusion.errors import ConfigError
from scafusion.value_objects import BEVGridSpec

CAMERA_PRESETS = {"desk": (320, 192), "full": (1900, 1200)}
LR_SCHEDULES = ("constant", "cosine")


def _require(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"{path}: {message}")


@dataclass(frozen=True)
class DatasetConfig:
    root: str = "data/desk"
    num_samples: int = 16
    val_samples: int = 0
    workers: int = 0

    def __post_init__(self):
        _require(self.num_samples >= 1, "dataset.num_samples", "has to be at least 1")
        _require(
            0 <= self.val_samples < self.num_samples,
            "dataset.val_samples",
            "has to be in [0, num_samples)",
        )
        _require(self.workers >= 0, "dataset.workers", "has to be non-negative")


@dataclass(frozen=True)
class SceneConfig:
    """Procedural scene and sensor rig parameters (meters, degrees)."""

    seed: int = 7
    camera_preset: str = "desk"
    terrain_extent: float = 48.0
    bump_count: int = 8
    bump_height_range: tuple[float, float] = (0.05, 0.4)
    bump_sigma_range: tuple[float, float] = (2.0, 5.0)
    crater_count: int = 4
    crater_depth_range: tuple[float, float] = (0.1, 0.4)
    crater_radius_range: tuple[float, float] = (1.0, 3.0)
    meteor_count_range: tuple[int, int] = (2, 4)
    meteor_size_range: tuple[float, float] = (0.4, 0.8)
    platform_count_range: tuple[int, int] = (1, 2)
    platform_size_range: tuple[float, float] = (1.6, 3.0)
    platform_height_range: tuple[float, float] = (0.9, 1.2)
    placement_x_range: tuple[float, float] = (5.0, 26.0)
    placement_half_width: float = 10.0
    min_object_gap: float = 0.5
    lidar_rings: int = 32
    lidar_elevation_range: tuple[float, float] = (-25.0, 5.0)
    lidar_azimuth_steps: int = 720
    lidar_height: float = 1.4
    max_range: float = 40.0
    intensity_noise: float = 0.02
    camera_height: float = 1.0
    camera_pitch: float = 8.0
    camera_hfov: float = 90.0
    light_elevation_range: tuple[float, float] = (20.0, 70.0)
    light_azimuth: float = 135.0

    def __post_init__(self):
        _require(
            self.camera_preset in CAMERA_PRESETS,
            "scene.camera_preset",
            f"has to be one of {sorted(CAMERA_PRESETS)}",
        )
        for name in (
            "bump_height_range",
            "bump_sigma_range",
            "crater_depth_range",
            "crater_radius_range",
            "meteor_size_range",
            "platform_size_range",
            "platform_height_range",
            "placement_x_range",
            "light_elevation_range",
            "meteor_count_range",
            "platform_count_range",
        ):
            low, high = getattr(self, name)
            _require(
                0 <= low <= high,
                f"scene.{name}",
                "has to be a non-negative (low, high) pair",
            )
        _require(
            self.bump_count >= 0 and self.crater_count >= 0,
            "scene.bump_count",
            "counts have to be >= 0",
        )
        smallest_platform = min(
            self.platform_size_range[0], self.platform_height_range[0]
        )
        _require(
            self.meteor_size_range[1] < smallest_platform,
            "scene.meteor_size_range",
            "meteor max size has to stay below every platform dimension",
        )
        _require(self.lidar_rings >= 1, "scene.lidar_rings", "has to be at least 1")
        _require(
            self.lidar_elevation_range[0] < self.lidar_elevation_range[1]
            or self.lidar_rings == 1,
            "scene.lidar_elevation_range",
            "has to be strictly increasing",
        )
        _require(self.max_range > 0, "scene.max_range", "has to be positive")
        _require(
            0 < self.camera_hfov < 170, "scene.camera_hfov", "has to be in (0, 170)"
        )
        _require(
            self.light_elevation_range[1] <= 90,
            "scene.light_elevation_range",
            "has to be <= 90 degrees",
        )

    @property
    def image_size(self) -> tuple[int, int]:
        """``(width, height)`` of the rendered camera image."""
        return CAMERA_PRESETS[self.camera_preset]


@dataclass(frozen=True)
class GridConfig:
    x_range: tuple[float, float] = (0.0, 32.0)
    y_range: tuple[float, float] = (-16.0, 16.0)
    cell_size: float = 0.5
    z_range: tuple[float, float] = (-3.0, 5.0)

    def __post_init__(self):
        try:
            spec = self.to_spec()
        except ValueError as error:
            raise ConfigError(f"grid: {error}") from error
        _require(
            spec.height % 4 == 0 and spec.width % 4 == 0,
            "grid.cell_size",
            "BEV extents have to be divisible by 4",
        )

    def to_spec(self) -> BEVGridSpec:
        return BEVGridSpec(self.x_range, self.y_range, self.cell_size, self.z_range)


@dataclass(frozen=True)
class ModelConfig:
    widths: tuple[int, int, int] = (32, 64, 128)
    heads: tuple[int, int, int] = (1, 2, 4)
    neck_channels: int = 64
    depth_bins: int = 32
    depth_range: tuple[float, float] = (1.0, 40.0)
    context_channels: int = 32
    lidar_channels: int = 64
    max_points: int = 32
    fused_channels: int = 64
    aux_channels: int = 64
    ctr_channels: int = 32
    sca_ratio: int = 8
    input_downsample: int = 2
    freeze_base: bool = True
    align_instance_mode: str = "channel"
    temperature: float = 0.1

    def __post_init__(self):
        for name in (
            "neck_channels",
            "context_channels",
            "lidar_channels",
            "fused_channels",
            "ctr_channels",
        ):
            _require(getattr(self, name) >= 1, f"model.{name}", "has to be positive")
        for width, heads in zip(self.widths, self.heads):
            _require(
                width % heads == 0,
                "model.heads",
                f"width {width} has to be divisible by {heads} heads",
            )
            _require(width >= 4, "model.widths", "stage widths have to be at least 4")
        _require(self.depth_bins >= 1, "model.depth_bins", "has to be at least 1")
        _require(
            0 < self.depth_range[0] < self.depth_range[1],
            "model.depth_range",
            "has to be increasing and positive",
        )
        _require(
            self.aux_channels >= 2 and self.aux_channels % 2 == 0,
            "model.aux_channels",
            "has to be even and >= 2",
        )
        _require(self.max_points >= 1, "model.max_points", "has to be at least 1")
        _require(self.sca_ratio >= 1, "model.sca_ratio", "has to be at least 1")
        _require(
            self.input_downsample >= 1, "model.input_downsample", "has to be at least 1"
        )
        _require(
            self.align_instance_mode in ("channel", "camera"),
            "model.align_instance_mode",
            "has to be 'channel' or 'camera'",
        )
        _require(self.temperature > 0, "model.temperature", "has to be positive")

    @property
    def bin_centres(self) -> tuple[float, ...]:
        low, high = self.depth_range
        return tuple(float(d) for d in np.linspace(low, high, self.depth_bins))


@dataclass(frozen=True)
class TogglesConfig:
    """Independent module switches; any subset is a valid ablation row."""

    cam_align: bool = True
    aux_branch: bool = True
    sca: bool = True
    saem: bool = True
    mona: bool = True
    camera_branch: bool = True


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-2
    lr_schedule: str = "cosine"
    min_lr_ratio: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 200
    batch_size: int = 2
    seed: int = 7
    log_every: int = 10
    eval_every: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        _require(
            self.learning_rate > 0, "optimizer.learning_rate", "has to be positive"
        )
        _require(
            self.lr_schedule in LR_SCHEDULES,
            "optimizer.lr_schedule",
            f"has to be one of {list(LR_SCHEDULES)}",
        )
        _require(
            0 < self.min_lr_ratio <= 1, "optimizer.min_lr_ratio", "has to be in (0, 1]"
        )
        _require(
            0 <= self.beta1 < 1 and 0 <= self.beta2 < 1,
            "optimizer.beta1",
            "betas have to be in [0, 1)",
        )
        _require(self.steps >= 0, "optimizer.steps", "has to be non-negative")
        _require(self.batch_size >= 1, "optimizer.batch_size", "has to be at least 1")
        _require(self.log_every >= 1, "optimizer.log_every", "has to be at least 1")
        _require(
            self.eval_every >= 0 and self.checkpoint_every >= 0,
            "optimizer.eval_every",
            "has to be non-negative",
        )


@dataclass(frozen=True)
class LossConfig:
    lambda_align: float = 0.1
    lambda_aux: float = 0.5
    focal_alpha: float = 2.0
    focal_beta: float = 4.0

    def __post_init__(self):
        _require(self.lambda_align >= 0, "loss.lambda_align", "has to be non-negative")
        _require(self.lambda_aux >= 0, "loss.lambda_aux", "has to be non-negative")


@dataclass(frozen=True)
class HeadConfig:
    score_thresh: float = 0.1
    nms_radius: float = 1.0
    max_boxes: int = 100

    def __post_init__(self):
        _require(
            0 <= self.score_thresh <= 1, "heads.score_thresh", "has to be in [0, 1]"
        )
        _require(self.nms_radius >= 0, "heads.nms_radius", "has to be non-negative")
        _require(self.max_boxes >= 1, "heads.max_boxes", "has to be at least 1")


@dataclass(frozen=True)
class EvalConfig:
    split: str = "train"
    thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)

    def __post_init__(self):
        _require(
            self.split in ("train", "val"), "eval.split", "has to be 'train' or 'val'"
        )
        _require(
            len(self.thresholds) > 0 and min(self.thresholds) > 0,
            "eval.thresholds",
            "has to be positive",
        )
        _require(
            2.0 in self.thresholds,
            "eval.thresholds",
            "has to include the 2 m threshold",
        )


@dataclass(frozen=True)
class AblationConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    num_samples: int = 64
    extended_rows: bool = False

    def __post_init__(self):
        _require(len(self.seeds) >= 1, "ablation.seeds", "needs at least one seed")
        _require(self.num_samples >= 1, "ablation.num_samples", "has to be at least 1")


@dataclass(frozen=True)
class RunConfig:
    out: str = "runs/default"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    toggles: TogglesConfig = field(default_factory=TogglesConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready snapshot (tuples become lists)."""
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def with_overrides(
        self, seed: int | None = None, out: str | None = None
    ) -> "RunConfig":
        config = self
        if seed is not None:
            config = dataclasses.replace(
                config,
                optimizer=dataclasses.replace(config.optimizer, seed=seed),
                scene=dataclasses.replace(config.scene, seed=seed),
            )
        if out is not None:
            config = dataclasses.replace(config, out=out)
        return config

    def with_toggles(self, **toggles: bool) -> "RunConfig":
        return dataclasses.replace(
            self, toggles=dataclasses.replace(self.toggles, **toggles)
        )

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        return _build(cls, data, "")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        """Read and validate a JSON config file.

        Raises:
            ConfigError: If the file is missing, not JSON, or fails validation.
        """
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as error:
            raise ConfigError(f"config file not found: {path}") from error
        except json.JSONDecodeError as error:
            raise ConfigError(
                f"config file {path} is not valid JSON: {error}"
            ) from error
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(data)


def _coerce(value: Any, default: Any, path: str) -> Any:
    if isinstance(default, bool):
        _require(isinstance(value, bool), path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        _require(
            isinstance(value, int) and not isinstance(value, bool),
            path,
            f"expected an integer, got {value!r}",
        )
        return value
    if isinstance(default, float):
        _require(
            isinstance(value, (int, float))
            and not isinstance(value, bool)
            and math.isfinite(value),
            path,
            f"expected a finite number, got {value!r}",
        )
        return float(value)
    if isinstance(default, str):
        _require(isinstance(value, str), path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        _require(isinstance(value, list), path, f"expected a list, got {value!r}")
        variable = path.split(".")[-1] in ("thresholds", "seeds")
        if len(default) in (2, 3) and not variable:
            _require(
                len(value) == len(default),
                path,
                f"expected {len(default)} entries, got {len(value)}",
            )
        template = default[0] if default else 0.0
        return tuple(_coerce(v, template, f"{path}[{i}]") for i, v in enumerate(value))
    raise ConfigError(f"{path}: unsupported key type")


def _build(cls: type, data: Any, prefix: str) -> Any:
    _require(
        isinstance(data, dict),
        prefix or "<root>",
        f"expected an object, got {type(data).__name__}",
    )
    defaults = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in known:
            raise ConfigError(f"{path}: unknown key")
        default = getattr(defaults, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, path)
        else:
            kwargs[key] = _coerce(value, default, path)
    return cls(**kwargs)
