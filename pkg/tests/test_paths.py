import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otflow.errors import BadReparameterization, DimMismatch, NonFiniteState
from otflow.models import AffineField, ConstantField, FunctionField, MlpField, MlpSpec
from otflow.ot import Gaussian, GaussianOTField
from otflow.paths import (
    CurveSpec,
    Trajectory,
    integrate_backward,
    integrate_forward,
    reference_endpoint_states,
    reference_endpoint_trajectory,
    sample_curve,
    trace,
)
from otflow.tensor import random_spd

DECAY = AffineField(-np.eye(1))


class TestTrajectory:
    def test_grid(self):
        tr = Trajectory(np.zeros((5, 2)))
        assert tr.K == 4 and tr.dt == 0.25
        np.testing.assert_array_equal(tr.times, [0, 0.25, 0.5, 0.75, 1])

    @pytest.mark.parametrize("shape", [(1, 2), (3,), (3, 0)])
    def test_bad_shapes(self, shape):
        with pytest.raises(DimMismatch):
            Trajectory(np.zeros(shape))

    def test_non_finite(self):
        with pytest.raises(NonFiniteState):
            Trajectory(np.array([[0.0], [np.inf]]))


class TestForward:
    @pytest.mark.parametrize("K", [1, 3, 8, 64])
    def test_constant_euler_exact(self, K):
        c = np.array([0.5, -2.0, 4.0])
        x0 = np.array([1.0, 1.0, -3.0])
        tr = integrate_forward(ConstantField(c), x0, K, "euler")
        expected = x0 + (np.arange(K + 1)[:, None] / K) * c
        np.testing.assert_allclose(tr.states, expected, rtol=0, atol=1e-14)

    def test_exponential_decay_rk4(self):
        tr = integrate_forward(DECAY, [1.0], 100, "rk4")
        assert abs(tr.end[0] - math.exp(-1)) < 1e-6

    def test_single_euler_step(self):
        f = AffineField(np.array([[2.0]]), [1.0])
        tr = integrate_forward(f, [3.0], 1, "euler")
        assert tr.states.shape == (2, 1) and tr.end[0] == 3.0 + 7.0

    def test_rk4_fourth_order(self):
        Ks = np.array([10, 20, 40, 80])
        errs = [abs(integrate_forward(DECAY, [1.0], int(K), "rk4").end[0] - math.exp(-1)) for K in Ks]
        slope = -np.polyfit(np.log(Ks), np.log(errs), 1)[0]
        assert 3.5 <= slope <= 4.5

    def test_euler_self_consistency(self):
        f = MlpField.initialize(MlpSpec(3, (8,)), np.random.default_rng(0))
        tr = integrate_forward(f, [0.2, -0.4, 1.0], 25, "euler")
        K = tr.K
        for k in range(K):
            v = f.eval(tr.states[k], k / K)
            assert np.array_equal(tr.states[k + 1], tr.states[k] + (1.0 / K) * v)

    def test_divergence_guard(self):
        blow = FunctionField(1, lambda x, t: 1e14 * np.ones_like(x))
        with pytest.raises(NonFiniteState):
            integrate_forward(blow, [0.0], 10)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            integrate_forward(DECAY, [1.0], 10, "midpoint")

    def test_batch_matches_single(self):
        f = AffineField(np.array([[0.0, 1.0], [-1.0, 0.0]]))
        xs = np.array([[1.0, 0.0], [0.0, 2.0]])
        batch = trace(f, xs, 20)
        for i in range(2):
            np.testing.assert_allclose(batch[:, i], integrate_forward(f, xs[i], 20).states, rtol=0, atol=1e-14)


class TestBackward:
    def test_constant_euler(self):
        c = np.array([1.0, -1.0])
        x1 = np.array([0.3, 0.7])
        tr = integrate_backward(ConstantField(c), x1, 7, "euler")
        np.testing.assert_allclose(tr.start, x1 - c, atol=1e-15)

    def test_exponential_decay(self):
        tr = integrate_backward(DECAY, [math.exp(-1)], 100, "rk4")
        assert abs(tr.start[0] - 1.0) < 1e-6

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), K=st.integers(1, 40), method=st.sampled_from(["euler", "rk4"]))
    def test_terminal_state_bit_exact(self, seed, K, method):
        rng = np.random.default_rng(seed)
        f = MlpField.initialize(MlpSpec(3, (6,)), rng)
        x1 = rng.standard_normal(3)
        tr = integrate_backward(f, x1, K, method)
        assert tr.end.tobytes() == x1.tobytes()

    def test_affine_duality(self):
        rng = np.random.default_rng(4)
        f = AffineField(0.5 * rng.standard_normal((4, 4)), rng.standard_normal(4))
        x1 = rng.standard_normal(4)
        x0 = integrate_backward(f, x1, 200, "rk4").start
        np.testing.assert_allclose(integrate_forward(f, x0, 200, "rk4").end, x1, atol=1e-8)


class TestReferenceEndpoint:
    def test_constant_modes_agree(self):
        f = ConstantField([1.0, 2.0])
        x1 = np.array([3.0, -1.0])
        a = reference_endpoint_trajectory(f, x1, 10, "rk4", "reversed-backward")
        b = reference_endpoint_trajectory(f, x1, 10, "rk4", "forward-corrected")
        np.testing.assert_allclose(a.states, b.states, atol=1e-14)

    def test_modes_differ_in_interior(self):
        x1 = np.array([0.5])
        a = reference_endpoint_trajectory(DECAY, x1, 50, "euler", "reversed-backward")
        b = reference_endpoint_trajectory(DECAY, x1, 50, "euler", "forward-corrected")
        assert np.array_equal(a.start, b.start) and np.array_equal(a.end, b.end)
        gap = np.max(np.abs(a.states[1:-1] - b.states[1:-1]))
        assert 1e-4 < gap < 10 * (1 / 50)

    def test_oracle_recovers_inverse_transport(self):
        rng = np.random.default_rng(5)
        g0 = Gaussian(rng.standard_normal(4), random_spd(rng, 4))
        g1 = Gaussian(rng.standard_normal(4), random_spd(rng, 4))
        orc = GaussianOTField(g0, g1)
        for x1 in g1.sample(rng, 5):
            tr = reference_endpoint_trajectory(orc, x1, 200, "rk4")
            np.testing.assert_allclose(tr.start, orc.preimage(x1), atol=1e-6)

    def test_batched_matches_single(self):
        f = AffineField(np.array([[0.1, -0.3], [0.2, 0.0]]))
        xs = np.array([[1.0, 2.0], [-1.0, 0.5]])
        st_ = reference_endpoint_states(f, xs, 12, "rk4", "forward-corrected")
        for i in range(2):
            one = reference_endpoint_trajectory(f, xs[i], 12, "rk4", "forward-corrected")
            np.testing.assert_allclose(st_[:, i], one.states, rtol=0, atol=1e-14)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            reference_endpoint_trajectory(DECAY, [1.0], 5, "rk4", "sideways")


class TestCurves:
    def test_straight(self):
        tr = sample_curve(CurveSpec.straight([0.0], [1.0]), 4)
        np.testing.assert_array_equal(tr.states[:, 0], [0, 0.25, 0.5, 0.75, 1])

    def test_squared_reparameterization(self):
        tr = sample_curve(CurveSpec.straight([0.0], [1.0]).with_sigma(lambda t: t**2), 4)
        np.testing.assert_allclose(tr.states[:, 0], [0, 0.0625, 0.25, 0.5625, 1], atol=1e-15)

    def test_grid_reparameterization(self):
        grid = np.linspace(0, 1, 101) ** 2
        tr = sample_curve(CurveSpec.straight([0.0], [1.0]).with_sigma(grid), 10)
        np.testing.assert_allclose(tr.states[:, 0], (np.arange(11) / 10) ** 2, atol=1e-4)

    def test_quarter_arc_length(self):
        arc = CurveSpec.arc([0.0, 0.0], [1.0, 0.0], [0.0, 1.0], 1.0, 0.0, math.pi / 2)
        tr = sample_curve(arc, 1000)
        length = np.linalg.norm(tr.increments(), axis=1).sum()
        assert abs(length - math.pi / 2) < 1e-4

    def test_arc_between_hits_endpoints(self):
        arc = CurveSpec.arc_between([0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        tr = sample_curve(arc, 50)
        np.testing.assert_allclose(tr.start, [0, 0, 0], atol=1e-14)
        np.testing.assert_allclose(tr.end, [2, 0, 0], atol=1e-14)
        assert tr.states[25, 1] > 0.1

    def test_polyline_arc_length_parameter(self):
        tr = sample_curve(CurveSpec.polyline([[0.0, 0.0], [1.0, 0.0], [1.0, 3.0]]), 4)
        np.testing.assert_allclose(tr.states, [[0, 0], [1, 0], [1, 1], [1, 2], [1, 3]], atol=1e-14)

    @pytest.mark.parametrize("grid", [[0.0, 0.5, 0.5, 1.0], [0.1, 1.0], [0.0, 0.9], [0.0, 0.7, 0.3, 1.0]])
    def test_bad_sigma(self, grid):
        with pytest.raises(BadReparameterization):
            CurveSpec.straight([0.0], [1.0]).with_sigma(np.array(grid))

    def test_bad_callable_sigma(self):
        curve = CurveSpec.straight([0.0], [1.0]).with_sigma(lambda t: 1 - t)
        with pytest.raises(BadReparameterization):
            sample_curve(curve, 5)
