import json

import numpy as np
import pytest

from scafusion.entities.scafusion_model import build_model
from scafusion.errors import CheckpointError
from scafusion.services.checkpoint import (
    MANIFEST,
    PAYLOAD,
    load_checkpoint,
    read_manifest,
    restore_parameters,
    save_checkpoint,
)


@pytest.fixture
def saved(tiny_config, tmp_path):
    """A freshly built tiny model and its checkpoint directory."""
    model = build_model(tiny_config)
    path = save_checkpoint(model, tiny_config, tmp_path / "ckpt", extra={"step": 3})
    return model, path


class TestCheckpoint:
    """Test checkpoint writing and restoring."""

    def test_round_trip_is_bit_exact(self, saved, tiny_config):
        """Test restored parameters, flags and config equal the saved ones."""
        model, path = saved

        restored, config = load_checkpoint(path)

        assert config == tiny_config
        original = model.param_store()
        for name, parameter in restored.param_store().items():
            np.testing.assert_array_equal(parameter.data, original[name].data)
            assert parameter.trainable == original[name].trainable

    def test_manifest_contents(self, saved):
        """Test the manifest records tensors, counts and extra fields."""
        model, path = saved

        manifest = read_manifest(path)

        assert manifest["step"] == 3
        assert manifest["parameters"]["total"] == model.param_store().count()
        assert [t["name"] for t in manifest["tensors"]] == model.param_store().names()

    def test_overwrite_replaces_directory(self, saved, tiny_config):
        """Test saving over an existing checkpoint leaves a single valid one."""
        model, path = saved

        save_checkpoint(model, tiny_config, path, extra={"step": 4})

        assert read_manifest(path)["step"] == 4
        assert sorted(p.name for p in path.parent.iterdir()) == ["ckpt"]

    def test_corrupt_payload(self, saved):
        """Test a flipped byte is caught by the tensor hash."""
        model, path = saved
        payload = bytearray((path / PAYLOAD).read_bytes())
        payload[0] ^= 0xFF
        (path / PAYLOAD).write_bytes(bytes(payload))

        with pytest.raises(CheckpointError, match="hash mismatch"):
            restore_parameters(model, path)

    def test_shape_mismatch(self, saved, tiny_config):
        """Test restoring into a model of other widths names the tensor."""
        _, path = saved
        manifest = json.loads((path / MANIFEST).read_text())
        manifest["tensors"][0]["shape"] = [1]
        (path / MANIFEST).write_text(json.dumps(manifest))

        with pytest.raises(CheckpointError, match=manifest["tensors"][0]["name"]):
            restore_parameters(build_model(tiny_config), path)

    def test_missing_tensor(self, saved, tiny_config):
        """Test checkpoint tensors without a model counterpart are rejected."""
        _, path = saved
        without_sca = build_model(tiny_config.with_toggles(sca=False))

        with pytest.raises(CheckpointError, match="no model counterpart"):
            restore_parameters(without_sca, path)

    def test_missing_directory(self, tmp_path):
        """Test a missing checkpoint raises CheckpointError."""
        with pytest.raises(CheckpointError, match="missing"):
            read_manifest(tmp_path / "nowhere")

    def test_unsupported_version(self, saved):
        """Test other format versions are rejected."""
        _, path = saved
        manifest = json.loads((path / MANIFEST).read_text())
        manifest["format_version"] = 99
        (path / MANIFEST).write_text(json.dumps(manifest))

        with pytest.raises(CheckpointError, match="version"):
            read_manifest(path)
