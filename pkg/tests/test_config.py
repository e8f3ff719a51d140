import json

import pytest

from scafusion.config import GridConfig, ModelConfig, RunConfig, SceneConfig
from scafusion.errors import ConfigError
from scafusion.value_objects import BEVGridSpec


class TestRunConfig:
    """Test loading and deriving run configurations."""

    def test_defaults(self):
        """Test the default run is the desk preset with every module enabled."""
        config = RunConfig()

        assert config.scene.image_size == (320, 192)
        assert config.grid.to_spec().shape == (64, 64)
        assert all(config.toggles.__dict__.values())

    def test_dict_round_trip(self, tiny_config):
        """Test a JSON snapshot rebuilds an equal config."""
        snapshot = json.loads(json.dumps(tiny_config.to_dict()))

        assert RunConfig.from_dict(snapshot) == tiny_config

    def test_partial_document(self):
        """Test omitted keys keep their defaults and floats accept integers."""
        config = RunConfig.from_dict({"optimizer": {"learning_rate": 1, "steps": 5}})

        assert config.optimizer.learning_rate == 1.0
        assert isinstance(config.optimizer.learning_rate, float)
        assert config.optimizer.steps == 5
        assert config.model == ModelConfig()

    @pytest.mark.parametrize(
        "document, path",
        [
            ({"optimizer": {"learning_rte": 0.1}}, "optimizer.learning_rte"),
            ({"optimizer": {"steps": "many"}}, "optimizer.steps"),
            ({"optimizer": {"lr_schedule": "step"}}, "optimizer.lr_schedule"),
            ({"model": {"widths": [8, 16]}}, "model.widths"),
            ({"model": {"heads": [1, 2, 3]}}, "model.heads"),
            ({"toggles": {"sca": 1}}, "toggles.sca"),
            ({"scene": {"camera_preset": "phone"}}, "scene.camera_preset"),
            ({"grid": {"cell_size": 3.0}}, "grid"),
            ({"eval": {"thresholds": [0.5, 1.0]}}, "eval.thresholds"),
            ({"dataset": []}, "dataset"),
        ],
    )
    def test_errors_name_the_key(self, document, path):
        """Test every rejection carries the dotted path of the offending key."""
        with pytest.raises(ConfigError, match=path.replace(".", r"\.")):
            RunConfig.from_dict(document)

    def test_load(self, tiny_config, tmp_path):
        """Test a config file on disk is read and validated."""
        path = tmp_path / "run.json"
        path.write_text(json.dumps(tiny_config.to_dict()))

        assert RunConfig.load(path) == tiny_config

    @pytest.mark.parametrize(
        "content, message",
        [(None, "not found"), ("{", "not valid JSON"), ("[]", "JSON object")],
    )
    def test_load_errors(self, tmp_path, content, message):
        """Test missing, unparsable and non-object files raise ConfigError."""
        path = tmp_path / "run.json"
        if content is not None:
            path.write_text(content)

        with pytest.raises(ConfigError, match=message):
            RunConfig.load(path)

    def test_with_overrides(self, tiny_config):
        """Test a seed override reaches the scene and the optimizer."""
        config = tiny_config.with_overrides(seed=11, out="elsewhere")

        assert config.scene.seed == 11
        assert config.optimizer.seed == 11
        assert config.out == "elsewhere"
        assert tiny_config.with_overrides() == tiny_config

    def test_with_toggles(self, tiny_config):
        """Test toggles are replaced individually."""
        config = tiny_config.with_toggles(sca=False, mona=False)

        toggles = config.toggles
        assert (toggles.sca, toggles.mona, toggles.cam_align) == (False, False, True)


class TestSectionConfigs:
    """Test per-section validation."""

    def test_grid_spec(self):
        """Test the grid section builds its BEV raster."""
        config = GridConfig(x_range=(0.0, 16.0), y_range=(-8.0, 8.0), cell_size=2.0)

        spec = config.to_spec()

        assert spec == BEVGridSpec((0.0, 16.0), (-8.0, 8.0), 2.0)

    def test_meteors_smaller_than_platforms(self):
        """Test meteors may not reach platform dimensions."""
        with pytest.raises(ConfigError, match="scene.meteor_size_range"):
            SceneConfig(meteor_size_range=(0.4, 2.0))

    def test_width_divisible_by_heads(self):
        """Test each stage width has to split evenly over its heads."""
        with pytest.raises(ConfigError, match="model.heads"):
            ModelConfig(widths=(8, 16, 30), heads=(1, 2, 4))
