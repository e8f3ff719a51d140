import numpy as np
import pytest

from scafusion.autograd import functional as F
from scafusion.autograd.gradcheck import (
    GradCheckResult,
    analytic_gradients,
    check_gradients,
    finite_diff,
    numerical_gradient,
    relative_error,
)


class TestRelativeError:
    """Test the max-norm relative error."""

    def test_identical_arrays(self):
        """Test equal gradients have zero error."""
        assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0

    def test_scaled_by_largest_magnitude(self):
        """Test the error is normalised by the larger of the two max norms."""
        error = relative_error(np.array([1.0, 0.0]), np.array([0.5, 0.0]))

        assert error == pytest.approx(0.5)

    def test_zero_gradients(self):
        """Test two zero gradients do not divide by zero."""
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


class TestFiniteDifferences:
    """Test central differences against closed forms."""

    def test_square_sum(self):
        """Test the numerical gradient of sum(x^2) is 2x."""
        x = np.array([0.5, -1.0, 2.0])

        grad = numerical_gradient(lambda t: F.reduce_sum(t * t), [x], 0)

        np.testing.assert_allclose(grad, 2 * x, rtol=1e-9)

    def test_analytic_runs_in_double_precision(self):
        """Test analytic gradients come back as 64-bit arrays."""
        inputs = [np.array([1.0, 2.0], dtype=np.float32)]

        (grad,) = analytic_gradients(lambda t: F.reduce_sum(t * t), inputs)

        assert grad.dtype == np.float64

    def test_finite_diff_of_sigmoid_affine(self):
        """Test the sigmoid-of-affine composite passes the check."""
        rng = np.random.default_rng(0)
        inputs = [
            rng.uniform(-1, 1, (3, 4)),
            rng.uniform(-1, 1, (2, 4)),
            rng.uniform(-1, 1, 2),
        ]

        def fn(x, w, b):
            return F.reduce_sum(F.sigmoid(F.affine(x, w, b)))

        for index in range(3):
            assert finite_diff(fn, inputs, index) < 1e-4

    def test_detects_wrong_gradient(self):
        """Test a function with a broken backward is flagged."""
        rng = np.random.default_rng(1)

        def fn(x):
            # detach breaks the chain for one factor, halving the analytic gradient
            return F.reduce_sum(x * x.detach())

        result = check_gradients(fn, [rng.uniform(0.5, 1.0, 4)], name="broken")

        assert not result.passed
        assert result.max_error == pytest.approx(0.5, rel=1e-6)


class TestGradCheckResult:
    """Test the result value object."""

    def test_pass_threshold(self):
        """Test passed compares the worst error with the tolerance."""
        assert GradCheckResult("a", (1e-6, 5e-5)).passed
        assert not GradCheckResult("b", (1e-6, 2e-4)).passed

    def test_no_inputs(self):
        """Test an empty error tuple counts as passing."""
        assert GradCheckResult("empty", ()).max_error == 0.0

    def test_wrt_selects_inputs(self):
        """Test wrt limits the checked inputs."""
        result = check_gradients(
            lambda a, b: F.reduce_sum(a * b), [np.ones(2), np.full(2, 3.0)], wrt=[1]
        )

        assert len(result.errors) == 1
