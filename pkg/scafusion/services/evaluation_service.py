import logging

from scafusion.autograd import no_grad
from scafusion.config import RunConfig
from scafusion.entities.scafusion_model import SCAFusionModel
from scafusion.entities.scene import SceneSample
from scafusion.services.batching import make_batch
from scafusion.services.box_decoder import decode_boxes
from scafusion.services.metrics import MetricsReport, evaluate
from scafusion.value_objects import Box3D

logger = logging.getLogger(__name__)


class EvaluationService:
    """Runs the model in inference mode and scores its boxes.

    Args:
        config: Run configuration (grid, head and eval sections are used).
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.grid = config.grid.to_spec()

    def predict(
        self, model: SCAFusionModel, samples: list[SceneSample]
    ) -> list[list[Box3D]]:
        """Boxes per sample; training-only components stay idle and NMS is applied."""
        was_training = model.training
        model.eval()
        boxes: list[list[Box3D]] = []
        size = self.config.optimizer.batch_size
        factor = self.config.model.input_downsample
        try:
            with no_grad():
                for start in range(0, len(samples), size):
                    inputs, _ = make_batch(samples[start : start + size], factor)
                    output = model(inputs)
                    boxes.extend(
                        decode_boxes(
                            output.main, self.grid, self.config.heads, apply_nms=True
                        )
                    )
        finally:
            model.train(was_training)
        return boxes

    def evaluate(
        self, model: SCAFusionModel, samples: list[SceneSample]
    ) -> MetricsReport:
        predictions = self.predict(model, samples)
        ground_truth = [list(s.boxes) for s in samples]
        return evaluate(predictions, ground_truth, self.config.eval.thresholds)
