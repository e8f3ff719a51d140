class ScafusionError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(ScafusionError, ValueError):
    """Operation inputs with incompatible extents."""


class NonFiniteError(ScafusionError, ArithmeticError):
    """A NaN or Inf was produced by a forward node or a gradient.

    Args:
        node: Name of the producing node.
        message: Additional detail.
    """

    def __init__(self, node: str, message: str = ""):
        self.node = node
        detail = f": {message}" if message else ""
        super().__init__(f"non-finite value produced by {node}{detail}")


class ConfigError(ScafusionError, ValueError):
    """Configuration document rejected; the message carries the dotted key path."""


class PlacementError(ScafusionError, ValueError):
    """Scene object placement failed; the message names the field to loosen."""


class DatasetError(ScafusionError, ValueError):
    """Malformed or missing dataset file."""


class CheckpointError(ScafusionError, ValueError):
    """Checkpoint could not be written or restored."""


class TrainingDivergedError(NonFiniteError):
    """Loss became non-finite during training.

    Args:
        step: Index of the failing step.
        components: Loss component breakdown at that step.
    """

    def __init__(self, step: int, components: dict[str, float]):
        self.step = step
        self.components = dict(components)
        breakdown = ", ".join(f"{k}={v:.6g}" for k, v in self.components.items())
        super().__init__("loss", f"step {step} ({breakdown})")
