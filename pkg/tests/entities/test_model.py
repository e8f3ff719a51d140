import dataclasses
import logging

import numpy as np
import pytest

from scafusion.entities.scafusion_model import ModelInput, build_model


class TestSCAFusionModel:
    """Test the assembled detector and its component toggles."""

    def test_eval_skips_training_only_branches(self, tiny_config, model_input):
        """Test evaluation never touches the alignment or aux branch."""
        model = build_model(tiny_config).eval()

        output = model(model_input, lambda_align=0.1, lambda_aux=0.5)

        assert output.main.cls.shape == (2, 2, 16, 16)
        assert output.aux is None
        assert output.align_loss is None
        assert model.counters["align_loss"] == 0
        assert model.counters["aux_branch"] == 0
        assert model.counters["forward"] == 1

    def test_training_runs_auxiliary_branches(self, tiny_config, model_input):
        """Test training with positive weights runs alignment and the aux head."""
        model = build_model(tiny_config).train()

        output = model(model_input, lambda_align=0.1, lambda_aux=0.5)

        assert model.counters["align_loss"] == 1
        assert model.counters["aux_branch"] == 1
        assert output.aux.cls.shape == (2, 2, 16, 16)
        assert output.align_loss is None or np.isfinite(output.align_loss.item())

    def test_single_camera_instance_skips_alignment(
        self, tiny_config, model_input, caplog
    ):
        """Test a one-sample batch in camera mode skips alignment with a warning."""
        config = dataclasses.replace(
            tiny_config,
            model=dataclasses.replace(tiny_config.model, align_instance_mode="camera"),
        )
        single = ModelInput(
            images=model_input.images[:1],
            depth_maps=model_input.depth_maps[:1],
            calibs=model_input.calibs[:1],
            point_clouds=model_input.point_clouds[:1],
        )
        model = build_model(config).train()
        logger = "scafusion.entities.scafusion_model"

        with caplog.at_level(logging.WARNING, logger=logger):
            output = model(single, lambda_align=0.1)

        assert output.align_loss is None
        assert model.counters["align_loss"] == 1
        assert "alignment skipped" in caplog.text

    def test_camera_mode_aligns_two_samples(self, tiny_config, model_input):
        """Test camera mode builds one instance per sample and yields a finite loss."""
        config = dataclasses.replace(
            tiny_config,
            model=dataclasses.replace(tiny_config.model, align_instance_mode="camera"),
        )
        model = build_model(config).train()

        output = model(model_input, lambda_align=0.1)

        assert output.align_loss is None or np.isfinite(output.align_loss.item())

    def test_zero_weights_skip_branches(self, tiny_config, model_input):
        """Test zero loss weights skip the branches even in training."""
        model = build_model(tiny_config).train()

        output = model(model_input)

        assert output.aux is None
        assert output.align_loss is None
        assert model.counters["aux_branch"] == 0

    def test_lidar_only(self, tiny_config, model_input):
        """Test disabling the camera branch removes every camera parameter."""
        model = build_model(tiny_config.with_toggles(camera_branch=False))

        output = model.eval()(model_input)

        assert model.camera is None
        camera_prefixes = ("camera", "align_encoder", "aux")
        names = [name for name, _ in model.named_parameters()]
        assert not any(name.startswith(camera_prefixes) for name in names)
        assert output.main.cls.shape == (2, 2, 16, 16)

    def test_inference_count_excludes_training_branches(self, tiny_config):
        """Test alignment encoder and aux branch are not inference parameters."""
        full = build_model(tiny_config)
        bare = build_model(tiny_config.with_toggles(cam_align=False, aux_branch=False))

        assert full.inference_parameter_count() == bare.inference_parameter_count()
        assert full.inference_parameter_count() < full.param_store().count()
        assert bare.inference_parameter_count() == bare.param_store().count()

    def test_sca_toggle(self, tiny_config):
        """Test the attention module exists only when enabled."""
        assert build_model(tiny_config).sca is not None
        assert build_model(tiny_config.with_toggles(sca=False)).sca is None
        assert build_model(tiny_config.with_toggles(saem=False)).sca.saem is None


class TestConfigureTrainable:
    """Test backbone freezing."""

    def test_adapter_only_with_mona(self, tiny_config):
        """Test only backbone adapters stay trainable while the rest trains."""
        store = build_model(tiny_config).param_store()

        backbone = store.subset("camera.backbone")
        assert backbone.trainable_names() == backbone.adapter_names()
        assert store["camera.neck.smooth.conv.weight"].trainable
        assert store["head.shared.weight"].trainable

    def test_full_tuning_without_mona(self, tiny_config):
        """Test the backbone trains fully when adapters are disabled."""
        model = build_model(tiny_config.with_toggles(mona=False))

        partition = model.configure_trainable(freeze_base=True)

        assert partition.tunable_fraction == 1.0

    def test_lidar_only_has_nothing_to_freeze(self, tiny_config):
        """Test there is no partition without a camera branch."""
        model = build_model(tiny_config.with_toggles(camera_branch=False))

        assert model.configure_trainable(freeze_base=True) is None

    @pytest.mark.parametrize("seed", [0, 1])
    def test_build_is_deterministic(self, tiny_config, seed):
        """Test the same seed builds identical parameters."""
        config = tiny_config.with_overrides(seed=seed)

        first = build_model(config).param_store()
        second = build_model(config).param_store()

        for name in first.names():
            np.testing.assert_array_equal(first[name].data, second[name].data)
