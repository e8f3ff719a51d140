from dataclasses import dataclass

import numpy as np

from scafusion.autograd import Tensor, default_dtype
from scafusion.autograd import functional as F
from scafusion.entities.layers import Linear
from scafusion.entities.module import Module
from scafusion.value_objects import BEVGridSpec, PointCloud

PILLAR_FEATURES = 9


@dataclass(frozen=True)
class PillarSet:
    """Points grouped into BEV pillars.

    Attributes:
        features: ``M x P x 9`` decorated points (x, y, z, intensity, offsets to
            the pillar mean, offsets to the cell centre in x/y), zero padded.
        mask: ``M x P`` validity of each slot.
        cell_index: ``M`` unique flat BEV indices, ascending.
    """

    features: np.ndarray
    mask: np.ndarray
    cell_index: np.ndarray

    @property
    def count(self) -> int:
        return int(self.cell_index.shape[0])

    @property
    def max_points(self) -> int:
        return int(self.mask.shape[1])


def voxelize(pc: PointCloud, grid: BEVGridSpec, max_points: int = 32) -> PillarSet:
    """Bin points into pillars, keeping the first ``max_points`` of each in input order.

    Points outside the grid or its z band are dropped.

    Raises:
        ValueError: If ``max_points`` < 1.
    """
    if max_points < 1:
        raise ValueError(f"max_points has to be at least 1 - not {max_points}")
    points = pc.points.astype(np.float64)
    index = grid.flat_index(points[:, :3])
    kept = np.flatnonzero(index >= 0)
    order = kept[np.argsort(index[kept], kind="stable")]
    cells, starts, counts = np.unique(
        index[order], return_index=True, return_counts=True
    )

    m = cells.shape[0]
    rank = np.arange(order.shape[0]) - np.repeat(starts, counts)
    pillar = np.repeat(np.arange(m), counts)
    take = rank < max_points
    order, rank, pillar = order[take], rank[take], pillar[take]

    raw = np.zeros((m, max_points, 4))
    mask = np.zeros((m, max_points), dtype=bool)
    raw[pillar, rank] = points[order]
    mask[pillar, rank] = True

    n_kept = np.maximum(mask.sum(axis=1, keepdims=True), 1)
    mean = raw[:, :, :3].sum(axis=1, keepdims=True) / n_kept[..., None]
    cx, cy = grid.cell_center(cells // grid.width, cells % grid.width)
    features = np.concatenate(
        [
            raw,
            raw[:, :, :3] - mean,
            raw[:, :, 0:1] - cx[:, None, None],
            raw[:, :, 1:2] - cy[:, None, None],
        ],
        axis=-1,
    )
    features *= mask[..., None]
    return PillarSet(
        features=features.astype(np.float32),
        mask=mask,
        cell_index=cells.astype(np.int64),
    )


class PillarEncoder(Module):
    """Per-point affine + ReLU, max over the pillar, scatter to the BEV grid.

    Args:
        out_channels: ``C_lidar``.
        rng: Initialisation generator.
    """

    def __init__(self, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.out_channels = out_channels
        self.linear = self.register_module(
            "linear", Linear(PILLAR_FEATURES, out_channels, rng)
        )

    def encode(self, pillars: PillarSet) -> Tensor:
        """``M x C`` pillar descriptors.

        Padded slots cannot win the max since ReLU output is non-negative.
        """
        points = Tensor(pillars.features, dtype=self.linear.weight.tensor.dtype)
        valid = pillars.mask[..., None].astype(points.dtype)
        activated = F.relu(self.linear(points)) * valid
        return F.reduce_max(activated, axis=1)

    def forward(self, pillars: PillarSet, grid: BEVGridSpec) -> Tensor:
        """Return ``C_lidar x H_bev x W_bev``; empty cells stay zero."""
        if pillars.count == 0:
            empty = np.zeros((self.out_channels,) + grid.shape)
            return Tensor(empty, dtype=default_dtype())
        return F.scatter_add(self.encode(pillars), pillars.cell_index, grid.shape)
