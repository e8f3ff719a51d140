import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from scafusion.autograd import backward
from scafusion.config import RunConfig
from scafusion.entities.module import ParamStore
from scafusion.entities.scafusion_model import SCAFusionModel, build_model
from scafusion.entities.scene import SceneSample
from scafusion.errors import NonFiniteError, TrainingDivergedError
from scafusion.services.batching import make_batch
from scafusion.services.checkpoint import save_checkpoint
from scafusion.services.evaluation_service import EvaluationService
from scafusion.services.losses import compute_losses, render_batch_targets
from scafusion.services.optimizer import AdamOptimizer, Optimizer

logger = logging.getLogger(__name__)


@dataclass
class TrainingResult:
    model: SCAFusionModel
    history: list[dict[str, Any]]

    @property
    def final_loss(self) -> float:
        return self.history[-1]["total"] if self.history else math.nan


class TrainerService:
    """Optimises a model on in-memory samples.

    Args:
        config: Run configuration.
        optimizer_class: Update rule applied to the trainable parameters.
        evaluation_class: Service used for periodic evaluation.
    """

    def __init__(
        self,
        config: RunConfig,
        optimizer_class: type[Optimizer] = AdamOptimizer,
        evaluation_class: type[EvaluationService] = EvaluationService,
    ):
        self.config = config
        self.optimizer_class = optimizer_class
        self.evaluator = evaluation_class(config)
        self.grid = config.grid.to_spec()

    def batches(self, samples: list[SceneSample]) -> list[list[SceneSample]]:
        """Batches for every step.

        Each pass over the data uses a fresh seeded permutation.
        """
        cfg = self.config.optimizer
        rng = np.random.default_rng(cfg.seed)
        size = min(cfg.batch_size, len(samples))
        order: list[int] = []
        result = []
        for _ in range(cfg.steps):
            if len(order) < size:
                order += rng.permutation(len(samples)).tolist()
            result.append([samples[k] for k in order[:size]])
            order = order[size:]
        return result

    def train_step(
        self,
        model: SCAFusionModel,
        optimizer: Optimizer,
        batch: list[SceneSample],
        step: int,
    ) -> dict[str, float]:
        """One forward/backward/update; returns the loss components.

        Raises:
            TrainingDivergedError: If the loss or a gradient becomes non-finite.
        """
        loss_cfg = self.config.loss
        inputs, boxes = make_batch(batch, self.config.model.input_downsample)
        targets = render_batch_targets(boxes, self.grid)
        optimizer.zero_grad()
        components: dict[str, float] = {}
        try:
            output = model(inputs, loss_cfg.lambda_align, loss_cfg.lambda_aux)
            losses = compute_losses(output, targets, loss_cfg)
            components = losses.components
            if not all(math.isfinite(v) for v in components.values()):
                raise TrainingDivergedError(step, components)
            backward(losses.total)
        except TrainingDivergedError:
            raise
        except NonFiniteError as error:
            raise TrainingDivergedError(step, components) from error
        optimizer.step()
        return components

    def train(
        self,
        samples: list[SceneSample],
        model: SCAFusionModel | None = None,
        out_dir: str | Path | None = None,
    ) -> TrainingResult:
        """Run ``optimizer.steps`` updates.

        Args:
            samples: Training samples.
            model: Model to continue from; a fresh seeded one by default.
            out_dir: Where history.csv and checkpoints go; nothing is written
                when omitted.

        Returns:
            Trained model and per-step loss history.
        """
        cfg = self.config.optimizer
        model = model or build_model(self.config)
        model.train()
        store = ParamStore.from_module(model)
        optimizer = self.optimizer_class(store, cfg)
        report = store.report()
        logger.info(
            "training %d steps: %d parameters, %d trainable, %d adapter",
            cfg.steps,
            report["total"],
            report["trainable"],
            report["adapter"],
        )
        history: list[dict[str, Any]] = []
        for step, batch in enumerate(self.batches(samples)):
            components = self.train_step(model, optimizer, batch, step)
            record: dict[str, Any] = {"step": step, **components}
            if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
                metrics = self.evaluator.evaluate(model, samples)
                record.update({"mAP": metrics.mean_ap, "NDS": metrics.nds})
            every = cfg.checkpoint_every
            if out_dir is not None and every and (step + 1) % every == 0:
                path = Path(out_dir) / "checkpoints" / f"step_{step + 1:06d}"
                save_checkpoint(model, self.config, path, {"step": step + 1})
            history.append(record)
            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                summary = " ".join(f"{k}={v:.5f}" for k, v in components.items())
                logger.info("step %d: %s", step, summary)
        if out_dir is not None:
            write_history(history, Path(out_dir) / "history.csv")
            save_checkpoint(
                model, self.config, Path(out_dir) / "checkpoint", {"step": len(history)}
            )
        return TrainingResult(model=model, history=history)


def write_history(history: list[dict[str, Any]], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fields: list[str] = []
    for record in history:
        fields += [k for k in record if k not in fields]
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        writer.writerows(history)
    return path
