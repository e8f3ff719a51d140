import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from scafusion.autograd import Tensor
from scafusion.autograd import functional as F
from scafusion.config import ModelConfig, RunConfig, TogglesConfig
from scafusion.entities.fusion import ConvFuser, SectionCoordinateAttention
from scafusion.entities.heads import CameraAuxBranch, CenterHead, HeadOutput
from scafusion.entities.lidar import PillarEncoder, voxelize
from scafusion.entities.module import (
    FreezePartition,
    Module,
    ParamStore,
    freeze_partition,
)
from scafusion.entities.view_transform import (
    CameraBranch,
    DepthAlignEncoder,
    alignment_instances,
    cam_align_preprocess,
    depth_features,
    keep_nonzero_instances,
    nt_xent_align_loss,
)
from scafusion.value_objects import (
    CLASS_NAMES,
    BEVGridSpec,
    CameraCalib,
    PointCloud,
)

logger = logging.getLogger(__name__)

TRAINING_ONLY_COMPONENTS = ("align_encoder", "aux")
DEPTH_FEATURE_CHANNELS = 2


@dataclass(frozen=True)
class ModelInput:
    """One batch at model resolution.

    Attributes:
        images: ``N x 3 x H x W`` RGB in [0, 1].
        depth_maps: ``N x H x W`` metric depth, 0 for sky.
        calibs: Calibration per sample, matching the image resolution.
        point_clouds: LiDAR sweep per sample, ego frame.
    """

    images: np.ndarray
    depth_maps: np.ndarray
    calibs: tuple[CameraCalib, ...]
    point_clouds: tuple[PointCloud, ...]

    @property
    def size(self) -> int:
        return len(self.point_clouds)


@dataclass(frozen=True)
class ModelOutput:
    main: HeadOutput
    aux: HeadOutput | None = None
    align_loss: Tensor | None = None


class SCAFusionModel(Module):
    """Camera and LiDAR BEV fusion detector with switchable components.

    Args:
        config: Widths and hyperparameters.
        toggles: Which components exist.
        grid: BEV raster.
        rng: Initialisation generator.
        num_classes: Detection classes ``K``.
    """

    def __init__(
        self,
        config: ModelConfig,
        toggles: TogglesConfig,
        grid: BEVGridSpec,
        rng: np.random.Generator,
        num_classes: int = len(CLASS_NAMES),
    ):
        super().__init__()
        self.config = config
        self.toggles = toggles
        self.grid = grid
        self.counters: Counter[str] = Counter()
        self.camera = self.align_encoder = self.aux = self.sca = None
        streams = []
        if toggles.camera_branch:
            self.camera = self.register_module(
                "camera",
                CameraBranch(
                    config.widths,
                    config.heads,
                    config.neck_channels,
                    config.bin_centres,
                    config.context_channels,
                    rng,
                    mona=toggles.mona,
                ),
            )
            streams.append(config.context_channels)
            if toggles.cam_align:
                encoder = DepthAlignEncoder(
                    DEPTH_FEATURE_CHANNELS, config.context_channels, rng
                )
                self.align_encoder = self.register_module("align_encoder", encoder)
            if toggles.aux_branch:
                self.aux = self.register_module(
                    "aux",
                    CameraAuxBranch(
                        config.context_channels,
                        config.aux_channels,
                        num_classes,
                        config.ctr_channels,
                        rng,
                    ),
                )
        self.lidar = self.register_module(
            "lidar", PillarEncoder(config.lidar_channels, rng)
        )
        streams.append(config.lidar_channels)
        self.fuser = self.register_module(
            "fuser", ConvFuser(tuple(streams), config.fused_channels, rng)
        )
        if toggles.sca:
            self.sca = self.register_module(
                "sca",
                SectionCoordinateAttention(
                    config.fused_channels, rng, config.sca_ratio, saem=toggles.saem
                ),
            )
        self.head = self.register_module(
            "head",
            CenterHead(config.fused_channels, num_classes, config.ctr_channels, rng),
        )

    def param_store(self) -> ParamStore:
        return ParamStore.from_module(self)

    def configure_trainable(self, freeze_base: bool) -> FreezePartition | None:
        """Freeze the camera backbone outside its adapters.

        Applies only when Mona is on and ``freeze_base`` is set.
        """
        if self.camera is None:
            return None
        mode = "adapter_only" if (self.toggles.mona and freeze_base) else "full"
        backbone = self.param_store().subset("camera.backbone")
        partition = freeze_partition(backbone, mode)
        logger.info(
            "camera backbone %s: tunable fraction %.4f",
            mode,
            partition.tunable_fraction,
        )
        return partition

    def inference_parameter_count(self) -> int:
        """Parameters reachable at inference (train-only components excluded)."""
        return sum(
            p.size
            for name, p in self.named_parameters()
            if name.split(".")[0] not in TRAINING_ONLY_COMPONENTS
        )

    def lidar_bev(self, point_clouds: tuple[PointCloud, ...]) -> Tensor:
        maps = [
            self.lidar(voxelize(pc, self.grid, self.config.max_points), self.grid)
            for pc in point_clouds
        ]
        return F.stack(maps, axis=0)

    def forward(
        self, inputs: ModelInput, lambda_align: float = 0.0, lambda_aux: float = 0.0
    ) -> ModelOutput:
        """Run the detector.

        Train-only components (alignment, aux branch) run only in training mode
        with a positive loss weight.

        Args:
            inputs: Batch at model resolution.
            lambda_align: Weight of the alignment loss; 0 skips it.
            lambda_aux: Weight of the aux loss; 0 skips the branch.

        Returns:
            Main head output plus optional aux output and alignment loss.
        """
        dtype = self.head.shared.weight.tensor.dtype
        streams = []
        aux = align = None
        if self.camera is not None:
            image = Tensor(inputs.images, dtype=dtype)
            context, camera_bev = self.camera(image, inputs.calibs, self.grid)
            streams.append(camera_bev)
            if self.training and self.align_encoder is not None and lambda_align > 0:
                self.counters["align_loss"] += 1
                stride = inputs.images.shape[2] // context.shape[2]
                mode = self.config.align_instance_mode
                far = self.config.depth_range[1]
                depth = depth_features(inputs.depth_maps, stride, far).astype(dtype)
                batch = None
                if alignment_instances(context.shape, mode) >= 2:
                    batch = cam_align_preprocess(
                        context,
                        depth,
                        self.align_encoder,
                        self.config.temperature,
                        mode,
                    )
                    batch = keep_nonzero_instances(batch)
                if batch is None:
                    logger.warning(
                        "alignment skipped: fewer than 2 non-degenerate instances"
                    )
                else:
                    align = nt_xent_align_loss(batch)
            if self.training and self.aux is not None and lambda_aux > 0:
                self.counters["aux_branch"] += 1
                aux = self.aux(camera_bev)
        streams.append(self.lidar_bev(inputs.point_clouds))
        fused = self.fuser(*streams)
        if self.sca is not None:
            fused = self.sca(fused)
        self.counters["forward"] += 1
        return ModelOutput(main=self.head(fused), aux=aux, align_loss=align)


def build_model(config: RunConfig) -> SCAFusionModel:
    """Fresh model seeded from ``optimizer.seed``, camera backbone freeze applied."""
    model = SCAFusionModel(
        config.model,
        config.toggles,
        config.grid.to_spec(),
        np.random.default_rng(config.optimizer.seed),
    )
    model.configure_trainable(config.model.freeze_base)
    return model
