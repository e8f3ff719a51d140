import numpy as np
import pytest

from scafusion.autograd import Tensor, backward, precision
from scafusion.autograd import functional as F
from scafusion.autograd.functional import SENTINEL_DROP
from scafusion.autograd.gradcheck import check_gradients
from scafusion.errors import ShapeError


class TestConv2d:
    """Test grouped 2D convolution."""

    def test_single_multiply_add(self):
        """Test a 1x1 kernel on a single pixel."""
        x = Tensor(np.full((1, 1, 1, 1), 2.0))
        w = Tensor(np.full((1, 1, 1, 1), 3.0))

        out = F.conv2d(x, w, Tensor([1.0]))

        np.testing.assert_allclose(out.data, [[[[7.0]]]])

    def test_depthwise_window_sums(self):
        """Test an all-ones 3x3 depthwise kernel counts the in-bounds neighbours."""
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))

        out = F.conv2d(x, w, padding=1, groups=1).data[0, 0]

        assert out[1, 1] == pytest.approx(9.0)
        assert out[0, 0] == pytest.approx(4.0)
        assert out[0, 1] == pytest.approx(6.0)

    def test_identity_kernel(self):
        """Test an identity 1x1 kernel with zero bias returns the input."""
        x = np.random.default_rng(0).normal(size=(2, 3, 4, 5))
        identity = Tensor(np.eye(3).reshape(3, 3, 1, 1))

        out = F.conv2d(Tensor(x), identity, Tensor(np.zeros(3)))

        np.testing.assert_allclose(out.data, x.astype(np.float32), rtol=1e-6)

    def test_output_size(self):
        """Test the output extent follows floor((H + 2p - k) / s) + 1."""
        x = Tensor(np.zeros((1, 2, 7, 6)))
        w = Tensor(np.zeros((4, 2, 3, 3)))

        out = F.conv2d(x, w, stride=2, padding=1)

        assert out.shape == (1, 4, 4, 3)

    def test_grouped_matches_split_convolutions(self):
        """Test groups=2 equals two independent convolutions."""
        rng = np.random.default_rng(1)
        x, w = rng.normal(size=(1, 4, 5, 5)), rng.normal(size=(6, 2, 3, 3))

        grouped = F.conv2d(Tensor(x), Tensor(w), padding=1, groups=2).data
        first = F.conv2d(Tensor(x[:, :2]), Tensor(w[:3]), padding=1).data
        second = F.conv2d(Tensor(x[:, 2:]), Tensor(w[3:]), padding=1).data

        np.testing.assert_allclose(
            grouped, np.concatenate([first, second], axis=1), rtol=1e-5, atol=1e-6
        )

    def test_gradient_matches_finite_differences(self):
        """Test input and weight gradients against central differences."""
        rng = np.random.default_rng(2)
        weights = rng.uniform(-1, 1, (2, 2, 5, 5))

        result = check_gradients(
            lambda x, w: F.reduce_sum(F.conv2d(x, w, padding=1) * weights),
            [rng.uniform(-1, 1, (2, 3, 5, 5)), rng.uniform(-1, 1, (2, 3, 3, 3))],
        )

        assert result.passed, result.errors

    def test_channel_mismatch(self):
        """Test mismatched input channels raise ShapeError naming dimension 1."""
        with pytest.raises(ShapeError, match="dim 1"):
            F.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))))

    def test_even_kernel_rejected(self):
        """Test even kernels are rejected."""
        with pytest.raises(ShapeError):
            F.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))


class TestLayerNorm:
    """Test layer normalisation."""

    def test_constant_input_gives_zeros(self):
        """Test zero-variance input is handled through eps."""
        x = Tensor(np.full((1, 4), 3.0))

        out = F.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))

        np.testing.assert_allclose(out.data, np.zeros((1, 4)))

    def test_two_values(self):
        """Test [1, 3] normalises to [-1, 1]."""
        with precision(np.float64):
            out = F.layer_norm(
                Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12
            )

        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-9)

    def test_channel_axis(self):
        """Test normalising over axis 1 of an NCHW map."""
        x = np.random.default_rng(3).normal(size=(2, 4, 3, 3))

        out = F.layer_norm(
            Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), axis=1
        ).data

        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-2)

    def test_gradient_matches_finite_differences(self):
        """Test gradients of input, gamma and beta."""
        rng = np.random.default_rng(4)
        weights = rng.uniform(-1, 1, (3, 4))

        result = check_gradients(
            lambda x, g, b: F.reduce_sum(F.layer_norm(x, g, b) * weights),
            [
                rng.uniform(-1, 1, (3, 4)),
                rng.uniform(0.5, 1.5, 4),
                rng.uniform(-1, 1, 4),
            ],
        )

        assert result.passed, result.errors

    def test_gamma_shape_mismatch(self):
        """Test gamma of the wrong extent raises ShapeError."""
        with pytest.raises(ShapeError):
            F.layer_norm(
                Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3))
            )


class TestReducePool:
    """Test average and max pooling over axis sets."""

    def test_average_row(self):
        """Test the mean of [1, 2, 3]."""
        out = F.reduce_pool(Tensor([[1.0, 2.0, 3.0]]), 1, "avg")

        np.testing.assert_allclose(out.data, [[2.0]])

    def test_max_row(self):
        """Test the maximum of [1, 2, 3]."""
        out = F.reduce_pool(Tensor([[1.0, 2.0, 3.0]]), 1, "max")

        np.testing.assert_allclose(out.data, [[3.0]])

    def test_channel_average(self):
        """Test averaging two channel maps gives their midpoint."""
        x = np.stack([np.ones((2, 2)), np.full((2, 2), 3.0)])[None]

        out = F.reduce_pool(Tensor(x), 1, "avg")

        np.testing.assert_allclose(out.data, np.full((1, 1, 2, 2), 2.0))

    def test_singleton_axis_is_identity(self):
        """Test pooling over an axis of extent 1 returns the input."""
        x = np.random.default_rng(5).normal(size=(2, 1, 3))

        for mode in ("avg", "max"):
            out = F.reduce_pool(Tensor(x), 1, mode)
            np.testing.assert_allclose(out.data, x.astype(np.float32))

    def test_max_tie_sends_gradient_to_first_index(self):
        """Test a tie routes the whole gradient to the lowest flat index."""
        x = Tensor([[2.0, 5.0, 5.0, 1.0]], requires_grad=True)

        backward(F.reduce_sum(F.reduce_pool(x, 1, "max")))

        np.testing.assert_allclose(x.grad, [[0.0, 1.0, 0.0, 0.0]])

    def test_empty_axis_set(self):
        """Test an empty axis set is rejected."""
        with pytest.raises(ShapeError):
            F.reduce_pool(Tensor([1.0]), (), "avg")

    def test_unknown_mode(self):
        """Test unknown pooling modes raise ValueError."""
        with pytest.raises(ValueError):
            F.reduce_pool(Tensor([1.0]), 0, "median")


class TestBilinearUpsample:
    """Test bilinear x2 upsampling with align-corners=false."""

    def test_constant_field(self):
        """Test a single pixel expands to a 2x2 constant block."""
        out = F.bilinear_upsample2x(Tensor(np.full((1, 1, 1, 1), 5.0)))

        np.testing.assert_allclose(out.data, np.full((1, 1, 2, 2), 5.0))

    def test_ramp(self):
        """Test [0, 1] interpolates to [0, 0.25, 0.75, 1]."""
        out = F.bilinear_upsample2x(Tensor(np.array([0.0, 1.0]).reshape(1, 1, 1, 2)))

        ramp = [0.0, 0.25, 0.75, 1.0]
        np.testing.assert_allclose(out.data[0, 0], [ramp, ramp])

    def test_gradient_matches_finite_differences(self):
        """Test the adjoint against central differences."""
        rng = np.random.default_rng(6)
        weights = rng.uniform(-1, 1, (1, 2, 6, 4))

        result = check_gradients(
            lambda x: F.reduce_sum(F.bilinear_upsample2x(x) * weights),
            [rng.uniform(-1, 1, (1, 2, 3, 2))],
        )

        assert result.passed, result.errors


class TestScatterAdd:
    """Test accumulation of rows into grid cells."""

    def test_shared_cell_sums(self):
        """Test two rows mapped to one cell add up."""
        out = F.scatter_add(Tensor([[1.0], [2.0]]), [4, 4], (2, 3))

        assert out.shape == (1, 2, 3)
        assert out.data[0, 1, 1] == pytest.approx(3.0)
        assert out.data.sum() == pytest.approx(3.0)

    def test_all_dropped(self):
        """Test sentinel rows contribute nothing."""
        dropped = [SENTINEL_DROP, SENTINEL_DROP]

        out = F.scatter_add(Tensor([[1.0], [2.0]]), dropped, (2, 2))

        np.testing.assert_allclose(out.data, np.zeros((1, 2, 2)))

    def test_gradient_routes_to_kept_rows(self):
        """Test the grid-sum gradient is 1 for kept rows and 0 for dropped ones."""
        values = Tensor(np.ones((3, 2)), requires_grad=True)

        backward(F.reduce_sum(F.scatter_add(values, [0, SENTINEL_DROP, 3], (2, 2))))

        np.testing.assert_allclose(values.grad, [[1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])

    def test_permutation_invariance(self):
        """Test shuffling rows (and their indices) leaves the grid unchanged."""
        rng = np.random.default_rng(7)
        values, index = rng.normal(size=(50, 3)), rng.integers(-1, 12, 50)
        order = rng.permutation(50)

        first = F.scatter_add(Tensor(values), index, (3, 4)).data
        second = F.scatter_add(Tensor(values[order]), index[order], (3, 4)).data

        np.testing.assert_allclose(first, second, rtol=1e-6, atol=1e-6)

    def test_out_of_range_index(self):
        """Test a non-sentinel index outside the grid is rejected."""
        with pytest.raises(ShapeError):
            F.scatter_add(Tensor([[1.0]]), [6], (2, 3))


class TestElementwise:
    """Test activations and elementwise helpers."""

    def test_activation_ranges(self):
        """Test sigmoid in (0, 1), ReLU non-negative and GELU(0) = 0."""
        x = Tensor(np.linspace(-5, 5, 21))

        sigmoid = F.sigmoid(x).data
        assert np.all((sigmoid > 0) & (sigmoid < 1))
        assert np.all(F.relu(x).data >= 0)
        assert F.gelu(Tensor([0.0])).item() == 0.0

    def test_softmax_sums_to_one(self):
        """Test softmax rows are distributions."""
        x = Tensor(np.random.default_rng(8).normal(size=(3, 5)))

        out = F.softmax(x, axis=1).data

        np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=1e-6)

    def test_split_and_concat_roundtrip(self):
        """Test split followed by concat restores the tensor."""
        x = Tensor(np.arange(12.0).reshape(2, 6))

        parts = F.split(x, [2, 4], axis=1)

        assert [p.shape for p in parts] == [(2, 2), (2, 4)]
        np.testing.assert_allclose(F.concat(parts, axis=1).data, x.data)

    def test_split_sizes_must_cover_axis(self):
        """Test split sizes that do not add up are rejected."""
        with pytest.raises(ShapeError):
            F.split(Tensor(np.zeros((2, 6))), [2, 2], axis=1)

    def test_clamp_gradient_masked_outside(self):
        """Test clamp passes gradient only inside the interval."""
        x = Tensor([-2.0, 0.0, 2.0], requires_grad=True)

        backward(F.reduce_sum(F.clamp(x, -1.0, 1.0)))

        np.testing.assert_allclose(x.grad, [0.0, 1.0, 0.0])

    def test_matmul_batch_mismatch(self):
        """Test matmul rejects differing batch dimensions."""
        with pytest.raises(ShapeError):
            F.matmul(Tensor(np.zeros((2, 2, 3))), Tensor(np.zeros((3, 3, 2))))
