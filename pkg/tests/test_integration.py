import csv
import dataclasses
import json

import pytest

from scafusion.cli import main
from scafusion.services.dataset_io import read_splits


@pytest.fixture
def config_path(tiny_config, tiny_scene_config, tmp_path):
    """Tiny run configuration with its dataset and outputs under tmp_path."""
    config = dataclasses.replace(
        tiny_config,
        out=str(tmp_path / "run"),
        scene=tiny_scene_config,
        dataset=dataclasses.replace(tiny_config.dataset, root=str(tmp_path / "data")),
    )
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config.to_dict()))
    return path


class TestCommandLine:
    """End-to-end runs of the command-line workflow."""

    def test_gen_train_eval_infer(self, config_path, tmp_path):
        """Test every output of a full gen, train, eval and infer run."""
        assert main(["gen", "--config", str(config_path)]) == 0
        train = read_splits(tmp_path / "data")["train"]
        assert train == ["sample_00000", "sample_00001"]

        assert main(["train", "--config", str(config_path)]) == 0
        run = tmp_path / "run"
        assert (run / "checkpoint" / "manifest.json").exists()
        with (run / "history.csv").open() as handle:
            assert len(list(csv.DictReader(handle))) == 2

        assert main(["eval", "--config", str(config_path)]) == 0
        report = json.loads((run / "report.json").read_text())
        assert 0.0 <= report["NDS"] <= 1.0

        assert main(["infer", "--config", str(config_path), "--viz"]) == 0
        inference = json.loads((run / "infer_sample_00000.json").read_text())
        assert inference["token"] == "sample_00000"
        assert (run / "bev_sample_00000.ppm").read_bytes().startswith(b"P6")

    def test_gradcheck(self, tmp_path):
        """Test the gradient suite writes its table and succeeds."""
        assert main(["gradcheck", "--instances", "1", "--out", str(tmp_path)]) == 0

        with (tmp_path / "gradcheck.csv").open() as handle:
            rows = list(csv.DictReader(handle))
        assert rows and all(row["passed"] == "True" for row in rows)

    def test_errors_exit_non_zero(self, tmp_path):
        """Test a missing config file is reported instead of raising."""
        assert main(["train", "--config", str(tmp_path / "missing.json")]) == 1

    def test_eval_without_checkpoint(self, config_path):
        """Test evaluating before training reports the missing checkpoint."""
        assert main(["eval", "--config", str(config_path)]) == 1
