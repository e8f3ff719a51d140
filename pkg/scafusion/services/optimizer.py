import math

import numpy as np

from scafusion.config import OptimizerConfig
from scafusion.entities.module import Parameter, ParamStore


class Optimizer:
    """Base optimizer over the trainable parameters of a store.

    Frozen parameters are skipped, so their values stay bit-identical.

    Args:
        store: Named parameters.
        config: Hyperparameters.
    """

    def __init__(self, store: ParamStore, config: OptimizerConfig):
        self.store = store
        self.config = config
        self.step_count = 0

    @property
    def learning_rate(self) -> float:
        """Get the rate for the current step under ``optimizer.lr_schedule``.

        The cosine schedule starts at ``learning_rate`` on the first step and
        reaches ``learning_rate * min_lr_ratio`` on the last configured step.
        """
        cfg = self.config
        if cfg.lr_schedule == "constant":
            return cfg.learning_rate
        progress = min(max(self.step_count - 1, 0) / max(cfg.steps - 1, 1), 1.0)
        floor = cfg.learning_rate * cfg.min_lr_ratio
        cosine = 0.5 * (1.0 + math.cos(math.pi * progress))
        return floor + (cfg.learning_rate - floor) * cosine

    def step(self) -> int:
        """Update every trainable parameter that received a gradient.

        Returns:
            Number of parameters updated.
        """
        self.step_count += 1
        updated = 0
        for name, parameter in self.store.items():
            if not parameter.trainable or parameter.grad is None:
                continue
            parameter.assign(self._update(name, parameter))
            updated += 1
        return updated

    def zero_grad(self) -> None:
        for _, parameter in self.store.items():
            parameter.zero_grad()

    def _update(self, name: str, parameter: Parameter) -> np.ndarray:
        """New value of one parameter.

        Args:
            name: Dotted parameter name.
            parameter: Parameter holding value and gradient.

        Returns:
            Updated value with the parameter's shape.

        Raises:
            NotImplementedError: Must be implemented by subclasses.
        """
        raise NotImplementedError()


class SGDOptimizer(Optimizer):
    """Plain gradient descent."""

    def _update(self, name: str, parameter: Parameter) -> np.ndarray:
        return parameter.data - self.learning_rate * parameter.grad


class AdamOptimizer(Optimizer):
    """Adaptive moment estimation with bias correction."""

    def __init__(self, store: ParamStore, config: OptimizerConfig):
        super().__init__(store, config)
        self.first_moment: dict[str, np.ndarray] = {}
        self.second_moment: dict[str, np.ndarray] = {}

    def _update(self, name: str, parameter: Parameter) -> np.ndarray:
        cfg = self.config
        grad = parameter.grad.astype(np.float64)
        m = cfg.beta1 * self.first_moment.get(name, 0.0) + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * self.second_moment.get(name, 0.0) + (1.0 - cfg.beta2) * grad**2
        self.first_moment[name], self.second_moment[name] = m, v
        m_hat = m / (1.0 - cfg.beta1**self.step_count)
        v_hat = v / (1.0 - cfg.beta2**self.step_count)
        return parameter.data - self.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
