import csv
import dataclasses
import math
from unittest.mock import Mock

import numpy as np
import pytest

from scafusion.entities.scafusion_model import build_model
from scafusion.errors import TrainingDivergedError
from scafusion.services import trainer as trainer_module
from scafusion.services.checkpoint import read_manifest
from scafusion.services.evaluation_service import EvaluationService
from scafusion.services.metrics import MetricsReport
from scafusion.services.optimizer import SGDOptimizer
from scafusion.services.trainer import TrainerService, write_history


def with_optimizer(config, **changes):
    optimizer = dataclasses.replace(config.optimizer, **changes)
    return dataclasses.replace(config, optimizer=optimizer)


class TestBatches:
    """Test the step schedule over the samples."""

    def test_every_pass_covers_all_samples(self, tiny_config, tiny_samples):
        """Test consecutive single-sample batches visit each sample once per pass."""
        service = TrainerService(with_optimizer(tiny_config, steps=4, batch_size=1))

        batches = service.batches(tiny_samples)

        tokens = [batch[0].token for batch in batches]
        expected = ["sample_00000", "sample_00001"]
        assert sorted(tokens[:2]) == sorted(tokens[2:]) == expected

    def test_batch_size_capped_by_samples(self, tiny_config, tiny_samples):
        """Test a batch never repeats a sample."""
        service = TrainerService(with_optimizer(tiny_config, steps=1, batch_size=5))

        (batch,) = service.batches(tiny_samples)

        assert len(batch) == 2

    def test_seeded(self, tiny_config, tiny_samples):
        """Test the schedule depends only on the optimizer seed."""
        config = with_optimizer(tiny_config, steps=6, batch_size=1)

        first = [b[0].token for b in TrainerService(config).batches(tiny_samples)]
        second = [b[0].token for b in TrainerService(config).batches(tiny_samples)]

        assert first == second


class TestTrainerService:
    """Test the optimisation loop."""

    def test_train_updates_only_trainable_parameters(self, tiny_config, tiny_samples):
        """Test frozen backbone weights stay bit-identical while the rest moves."""
        model = build_model(tiny_config)
        before = {name: p.data.copy() for name, p in model.param_store().items()}
        service = TrainerService(tiny_config, optimizer_class=SGDOptimizer)

        result = service.train(tiny_samples, model=model)

        assert len(result.history) == 2
        assert math.isfinite(result.final_loss)
        changed = set()
        for name, parameter in result.model.param_store().items():
            if not parameter.trainable:
                np.testing.assert_array_equal(parameter.data, before[name])
            elif not np.array_equal(parameter.data, before[name]):
                changed.add(name)
        assert changed

    def test_history_records_components(self, tiny_config, tiny_samples):
        """Test each step logs the weighted loss breakdown."""
        result = TrainerService(tiny_config).train(tiny_samples)

        assert [r["step"] for r in result.history] == [0, 1]
        assert {"heatmap", "regression", "det", "total"} <= set(result.history[0])

    def test_periodic_evaluation(self, tiny_config, tiny_samples):
        """Test the evaluator runs every eval_every steps."""
        evaluator = Mock(spec=EvaluationService)
        report = Mock(spec=MetricsReport, mean_ap=0.25, nds=0.5)
        evaluator.evaluate.return_value = report
        config = with_optimizer(tiny_config, eval_every=2)
        service = TrainerService(config, evaluation_class=Mock(return_value=evaluator))

        result = service.train(tiny_samples)

        evaluator.evaluate.assert_called_once()
        assert "mAP" not in result.history[0]
        assert result.history[1]["NDS"] == 0.5

    def test_outputs_written(self, tiny_config, tiny_samples, tmp_path):
        """Test history.csv and a final checkpoint land in the output folder."""
        config = with_optimizer(tiny_config, checkpoint_every=1)

        TrainerService(config).train(tiny_samples, out_dir=tmp_path)

        with (tmp_path / "history.csv").open() as handle:
            assert len(list(csv.DictReader(handle))) == 2
        assert read_manifest(tmp_path / "checkpoint")["step"] == 2
        assert read_manifest(tmp_path / "checkpoints" / "step_000001")["step"] == 1

    def test_divergence_reports_step(self, tiny_config, tiny_samples, monkeypatch):
        """Test a non-finite loss stops training with the step and breakdown."""
        losses = Mock(components={"det": math.nan, "total": math.nan})
        monkeypatch.setattr(trainer_module, "compute_losses", Mock(return_value=losses))

        with pytest.raises(TrainingDivergedError) as error:
            TrainerService(tiny_config).train(tiny_samples)

        assert error.value.step == 0
        assert "total" in error.value.components

    def test_seeded_runs_reach_the_same_loss(self, tiny_config, tiny_samples):
        """Test two runs with seed 7 end on the same loss."""
        config = with_optimizer(tiny_config, steps=3, seed=7)

        first = TrainerService(config).train(tiny_samples).final_loss
        second = TrainerService(config).train(tiny_samples).final_loss

        assert first == pytest.approx(second, abs=1e-6)

    def test_single_sample_batches_in_camera_mode(self, tiny_config, tiny_samples):
        """Test camera-level alignment trains on one-sample batches without it."""
        config = dataclasses.replace(
            with_optimizer(tiny_config, steps=1, batch_size=1),
            model=dataclasses.replace(tiny_config.model, align_instance_mode="camera"),
        )

        result = TrainerService(config).train(tiny_samples)

        assert math.isfinite(result.final_loss)
        assert "align" not in result.history[0]


@pytest.mark.slow
class TestOverfit:
    """Test the optimiser can fit a single scene."""

    @pytest.fixture(scope="class")
    def history(self, tiny_config, tiny_samples):
        config = dataclasses.replace(
            with_optimizer(tiny_config, steps=200, batch_size=1, log_every=50),
            model=dataclasses.replace(
                tiny_config.model, fused_channels=16, ctr_channels=16
            ),
        )
        return TrainerService(config).train(tiny_samples[:1]).history

    def test_detection_loss_drops_tenfold(self, history):
        """Test 200 steps on one sample cut the detection loss by at least 10x."""
        assert history[-1]["det"] <= history[0]["det"] / 10.0

    def test_loss_trend_is_non_increasing(self, history):
        """Test the mean detection loss never rises between 40-step windows."""
        det = np.array([record["det"] for record in history])

        windows = det.reshape(5, 40).mean(axis=1)

        assert np.all(np.diff(windows) <= 0.0)


def test_write_history_unions_columns(tmp_path):
    """Test columns that appear only in some records still get a header."""
    records = [{"step": 0, "total": 1.0}, {"step": 1, "total": 0.5, "mAP": 0.1}]

    path = write_history(records, tmp_path / "h.csv")

    with path.open() as handle:
        rows = list(csv.DictReader(handle))

    assert list(rows[0]) == ["step", "total", "mAP"]
    assert rows[0]["mAP"] == ""
