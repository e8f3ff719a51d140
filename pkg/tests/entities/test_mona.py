import numpy as np
import pytest

from scafusion.autograd import Tensor
from scafusion.entities.backbone import Backbone
from scafusion.entities.module import ParamStore, freeze_partition
from scafusion.entities.mona import MonaAdapter
from scafusion.errors import ShapeError


class TestMonaAdapter:
    """Test the multi-cognitive visual adapter."""

    def test_identity_at_init(self):
        """Test a zero-initialised up-projection returns the input unchanged."""
        adapter = MonaAdapter(8, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(2, 6, 8))

        out = adapter(Tensor(x), (2, 3))

        np.testing.assert_allclose(out.data, x.astype(np.float32), atol=1e-7)

    def test_nonzero_up_changes_output(self):
        """Test the adapter contributes once the up-projection is trained."""
        adapter = MonaAdapter(8, np.random.default_rng(0))
        adapter.up.weight.assign(np.full(adapter.up.weight.shape, 0.1))
        x = np.random.default_rng(1).normal(size=(1, 4, 8))

        out = adapter(Tensor(x), (2, 2))

        assert not np.allclose(out.data, x)

    def test_channel_mismatch(self):
        """Test the channel extent is validated."""
        adapter = MonaAdapter(8, np.random.default_rng(0))

        with pytest.raises(ShapeError, match="channels"):
            adapter(Tensor(np.zeros((1, 4, 6))), (2, 2))

    def test_token_count_mismatch(self):
        """Test the token count has to match the grid."""
        adapter = MonaAdapter(8, np.random.default_rng(0))

        with pytest.raises(ShapeError, match="token count"):
            adapter(Tensor(np.zeros((1, 5, 8))), (2, 2))

    def test_invalid_ratio(self):
        """Test a bottleneck ratio below 2 is rejected."""
        with pytest.raises(ValueError):
            MonaAdapter(8, np.random.default_rng(0), ratio=1)


class TestBackboneAdapters:
    """Test adapters inside the transformer backbone."""

    def test_identity_at_init_matches_plain_backbone(self, tiny_backbone_args):
        """Test enabling adapters leaves every stage output unchanged at init."""
        widths, heads = tiny_backbone_args
        with_mona = Backbone(widths, heads, np.random.default_rng(0), mona=True)
        plain = Backbone(widths, heads, np.random.default_rng(1), mona=False)
        adapted = ParamStore.from_module(with_mona)
        for name, parameter in ParamStore.from_module(plain).items():
            parameter.assign(adapted[name].data)
        image = Tensor(np.random.default_rng(2).uniform(0, 1, (1, 3, 32, 16)))

        for a, b in zip(with_mona(image), plain(image)):
            np.testing.assert_allclose(a.data, b.data, atol=1e-7)

    def test_adapter_only_fraction_is_small(self):
        """Test adapter-only tuning leaves under a fifth of the backbone trainable.

        The check runs at the default stage widths.
        """
        rng = np.random.default_rng(0)
        backbone = Backbone((32, 64, 128), (1, 2, 4), rng, mona=True)

        partition = freeze_partition(ParamStore.from_module(backbone), "adapter_only")

        assert 0.0 < partition.tunable_fraction < 0.20
        assert all("mona" in name for name in partition.trainable)
