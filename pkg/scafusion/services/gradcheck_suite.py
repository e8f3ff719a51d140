"""Finite-difference gradient suite over every primitive and the composite modules."""

import logging
from typing import Callable, Iterator

import numpy as np

from scafusion.autograd import Tensor, precision
from scafusion.autograd import functional as F
from scafusion.autograd.gradcheck import (
    DEFAULT_EPS,
    DEFAULT_TOLERANCE,
    GradCheckResult,
    check_gradients,
)
from scafusion.entities.fusion import ConvFuser, SectionCoordinateAttention
from scafusion.entities.heads import CameraAuxBranch, CenterHead
from scafusion.entities.lidar import PillarEncoder, PillarSet
from scafusion.entities.module import Module, ParamStore
from scafusion.entities.mona import MonaAdapter
from scafusion.entities.view_transform import AlignBatch, lift_splat, nt_xent_align_loss
from scafusion.services.losses import focal_loss
from scafusion.value_objects import BEVGridSpec

logger = logging.getLogger(__name__)

DEFAULT_INSTANCES = 5
KINK_MARGIN = 0.1
SMALL_GRID = BEVGridSpec((0.0, 4.0), (-2.0, 2.0), 1.0, (-1.0, 1.0))

Case = tuple[Callable[..., Tensor], list[np.ndarray]]


def weighted_sum(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Scalar readout with random weights so every output element counts differently."""
    weights = rng.uniform(-1.0, 1.0, out.shape)
    return F.reduce_sum(out * weights)


def away_from_zero(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.choice([-1.0, 1.0], shape) * rng.uniform(KINK_MARGIN, 1.0, shape)


def distinct(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Values at least ``2 / size`` apart so max-reductions have no ties within eps."""
    size = int(np.prod(shape))
    return rng.permutation(np.linspace(-1.0, 1.0, size)).reshape(shape)


def _scalarised(
    fn: Callable[..., Tensor], rng: np.random.Generator
) -> Callable[..., Tensor]:
    seed = int(rng.integers(2**31))

    def scalar(*tensors: Tensor) -> Tensor:
        return weighted_sum(fn(*tensors), np.random.default_rng(seed))

    return scalar


def primitive_cases(rng: np.random.Generator) -> Iterator[tuple[str, Case]]:
    """One random instance of every primitive, as ``(name, (fn, inputs))``."""

    def u(*shape: int) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, shape)

    def positive(*shape: int) -> np.ndarray:
        return rng.uniform(0.5, 2.0, shape)

    yield "add", (F.add, [u(2, 3), u(3)])
    yield "sub", (F.sub, [u(2, 3), u(2, 1)])
    yield "mul", (F.mul, [u(2, 3), u(2, 3)])
    yield "div", (F.div, [u(2, 3), positive(2, 3)])
    yield "exp", (F.exp, [u(2, 3)])
    yield "log", (F.log, [positive(2, 3)])
    yield "power", (lambda x: F.power(x, 1.5), [positive(2, 3)])
    yield "absolute", (F.absolute, [away_from_zero(rng, (2, 3))])
    clamp_input = away_from_zero(rng, (2, 3))
    clamp_input[np.abs(np.abs(clamp_input) - 0.5) < KINK_MARGIN / 2] *= 1.5
    yield "clamp", (lambda x: F.clamp(x, -0.5, 0.5), [clamp_input])
    yield "sigmoid", (F.sigmoid, [u(2, 3)])
    yield "relu", (F.relu, [away_from_zero(rng, (2, 3))])
    yield "gelu", (F.gelu, [u(2, 3)])
    yield "softmax", (lambda x: F.softmax(x, axis=1), [u(2, 4)])
    yield "reduce_sum", (lambda x: F.reduce_sum(x, axis=1, keepdims=True), [u(2, 3, 2)])
    yield "reduce_mean", (lambda x: F.reduce_mean(x, axis=(0, 2)), [u(2, 3, 2)])
    yield "reduce_pool_avg", (
        lambda x: F.reduce_pool(x, (2, 3), "avg"),
        [u(1, 2, 3, 3)],
    )
    yield "reduce_pool_max", (
        lambda x: F.reduce_pool(x, 1, "max"),
        [distinct(rng, (1, 3, 2, 2))],
    )
    yield "matmul", (F.matmul, [u(2, 2, 3), u(2, 3, 2)])
    yield "affine", (F.affine, [u(4, 3), u(2, 3), u(2)])
    yield "conv2d", (
        lambda x, w, b: F.conv2d(x, w, b, padding=1),
        [u(2, 3, 5, 5), u(2, 3, 3, 3), u(2)],
    )
    yield "conv2d_depthwise", (
        lambda x, w: F.conv2d(x, w, padding=1, groups=2),
        [u(1, 2, 4, 4), u(2, 1, 3, 3)],
    )
    yield "conv2d_strided", (
        lambda x, w: F.conv2d(x, w, stride=2, padding=1),
        [u(1, 2, 5, 5), u(3, 2, 3, 3)],
    )
    yield "conv2d_pointwise", (
        lambda x, w, b: F.conv2d(x, w, b),
        [u(1, 3, 2, 2), u(2, 3, 1, 1), u(2)],
    )
    yield "layer_norm", (
        lambda x, g, b: F.layer_norm(x, g, b),
        [u(3, 4), positive(4), u(4)],
    )
    yield "bilinear_upsample2x", (F.bilinear_upsample2x, [u(1, 2, 3, 2)])
    index = rng.integers(-1, 6, 5)
    yield "scatter_add", (lambda v: F.scatter_add(v, index, (2, 3)), [u(5, 2)])

    def concat_split(a: Tensor, b: Tensor) -> Tensor:
        parts = F.split(F.concat([a, b], axis=1), [1, 3], axis=1)
        return F.concat(list(reversed(parts)), axis=1)

    yield "concat_split", (concat_split, [u(2, 1), u(2, 3)])
    yield "reshape_permute", (lambda x: x.reshape(3, 4).permute(1, 0), [u(2, 6)])


def _module_case(
    module: Module,
    parameter_name: str,
    call: Callable[[Tensor], Tensor],
    x: np.ndarray,
) -> Case:
    """Check a module w.r.t. its input and one of its parameters.

    The parameter is routed through ``Parameter.bound``.
    """
    parameter = ParamStore.from_module(module)[parameter_name]

    def fn(inputs: Tensor, weight: Tensor) -> Tensor:
        with parameter.bound(weight):
            return call(inputs)

    return fn, [x, parameter.data.astype(np.float64)]


def module_cases(rng: np.random.Generator) -> Iterator[tuple[str, Case]]:
    """One random instance of every composite module check."""
    init = np.random.default_rng(int(rng.integers(2**31)))

    mona = MonaAdapter(8, init, ratio=4).to_dtype(np.float64)
    mona.up.weight.assign(init.uniform(-0.5, 0.5, mona.up.weight.shape))
    yield "mona_adapter", _module_case(
        mona, "down.weight", lambda x: mona(x, (2, 3)), rng.uniform(-1, 1, (1, 6, 8))
    )

    sca = SectionCoordinateAttention(8, init, ratio=4).to_dtype(np.float64)
    sca.cpem.shared.bias.assign(np.full(sca.cpem.shared.bias.shape, 4.0))
    yield "sca_apply", _module_case(
        sca, "cpem.conv_h.weight", sca, distinct(rng, (1, 8, 3, 4))
    )

    temperature = float(rng.uniform(0.5, 1.0))
    yield "nt_xent_align_loss", (
        lambda a, b: nt_xent_align_loss(AlignBatch(a, b, temperature)),
        [rng.uniform(-1, 1, (4, 5)), rng.uniform(-1, 1, (4, 5))],
    )

    ranges = np.array([SMALL_GRID.x_range, SMALL_GRID.y_range, SMALL_GRID.z_range])
    low, high = ranges[:, 0], ranges[:, 1]
    frustum = Tensor(rng.uniform(low - 0.5, high + 0.5, (3, 2, 2, 3)), dtype=np.float64)
    yield "lift_splat", (
        lambda ctx, prob: lift_splat(ctx, prob, [frustum], SMALL_GRID),
        [rng.uniform(-1, 1, (1, 2, 2, 2)), rng.uniform(0, 1, (1, 3, 2, 2))],
    )

    encoder = PillarEncoder(3, init).to_dtype(np.float64)
    encoder.linear.bias.assign(np.full(3, 4.0))
    pillars = PillarSet(
        features=distinct(rng, (2, 2, 9)),
        mask=np.array([[True, True], [True, False]]),
        cell_index=np.array([1, 6]),
    )
    weight = encoder.linear.weight

    def encode(bound: Tensor) -> Tensor:
        with weight.bound(bound):
            return encoder(pillars, SMALL_GRID)

    yield "pillar_encode_scatter", (encode, [weight.data.astype(np.float64)])

    head = CenterHead(4, 2, 4, init).to_dtype(np.float64)
    head.shared.bias.assign(np.full(4, 4.0))
    for hidden, _ in head.branches.values():
        hidden.bias.assign(np.full(4, 15.0))
    yield "center_head", _module_case(
        head,
        "shared.weight",
        lambda x: F.concat(list(head(x).fields().values()), axis=1),
        rng.uniform(-1, 1, (1, 4, 8, 8)),
    )

    heatmap = rng.uniform(0.0, 0.9, (1, 2, 4, 4))
    heatmap[0, 0, 1, 1] = heatmap[0, 1, 2, 3] = 1.0
    yield "focal_loss", (
        lambda logits: focal_loss(logits, heatmap),
        [rng.uniform(-3, 3, (1, 2, 4, 4))],
    )

    fuser = ConvFuser((2, 3), 4, init).to_dtype(np.float64)
    fuser.block.norm.beta.assign(np.full(4, 3.0))
    yield "fuse_convcat", _module_case(
        fuser,
        "block.conv.weight",
        lambda x: fuser(*F.split(x, [2, 3], axis=1)),
        rng.uniform(-1, 1, (1, 5, 4, 4)),
    )

    aux = CameraAuxBranch(2, 4, 2, 4, init).to_dtype(np.float64)
    for name, parameter in ParamStore.from_module(aux).items():
        if name.endswith("beta"):
            parameter.assign(np.full(parameter.shape, 4.0))
        elif name.endswith("shortcut.weight"):
            parameter.assign(parameter.data * 0.01)
    yield "aux_branch_forward", _module_case(
        aux,
        "stage1.block0.conv1.weight",
        aux.features,
        rng.uniform(-1, 1, (1, 2, 8, 8)),
    )


def run_suite(
    instances: int = DEFAULT_INSTANCES,
    seed: int = 0,
    eps: float = DEFAULT_EPS,
    tolerance: float = DEFAULT_TOLERANCE,
) -> list[GradCheckResult]:
    """Check every primitive and module on ``instances`` random inputs each.

    Checks run in 64-bit mode.

    Returns:
        One result per (check, instance), named ``"<check>[<instance>]"``.
    """
    rng = np.random.default_rng(seed)
    results = []
    with precision(np.float64):
        for instance in range(instances):
            for source in (primitive_cases, module_cases):
                for name, (fn, inputs) in source(rng):
                    result = check_gradients(
                        _scalarised(fn, rng),
                        inputs,
                        f"{name}[{instance}]",
                        eps,
                        tolerance,
                    )
                    logger.debug(
                        "%s: max relative error %.3g", result.name, result.max_error
                    )
                    results.append(result)
    failed = [r.name for r in results if not r.passed]
    logger.info(
        "gradient suite: %d checks, %d failed%s",
        len(results),
        len(failed),
        f" ({', '.join(failed)})" if failed else "",
    )
    return results
