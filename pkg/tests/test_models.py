import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otflow.errors import DimMismatch, TimeOutOfRange
from otflow.models import (
    AdditiveSinScore,
    AffineField,
    BoundedTanhField,
    CompositeScore,
    ConstantField,
    GridLogitScore,
    LinearScore,
    MlpField,
    MlpScore,
    MlpSpec,
    PerturbedField,
    QuadraticScore,
    StraightPairField,
    init_params,
    mlp_loss_and_grads,
    mlp_param_gradients,
    model_from_state,
)
from otflow.ot import Gaussian, GaussianOTField
from otflow.tensor import finite_diff_gradient, random_spd


def score_zoo(rng):
    d = 4
    h = random_spd(rng, d)
    return [
        AdditiveSinScore(d, rng.standard_normal(d), 0.3),
        LinearScore(rng.standard_normal(d), -1.0),
        QuadraticScore(h, rng.standard_normal(d)),
        MlpScore.random(d, (8, 6), rng),
        GridLogitScore.template(4, 4, rng, pool=2),
        2.0 * AdditiveSinScore(d) + LinearScore(rng.standard_normal(d)),
    ]


class TestScoreValues:
    def test_additive_zero(self):
        assert AdditiveSinScore(10).value(np.zeros(10)) == 0.0

    def test_linear(self):
        assert LinearScore([1.0, 2.0]).value([3.0, 4.0]) == 11.0

    def test_quadratic_identity(self):
        assert QuadraticScore(np.eye(2)).value([1.0, 1.0]) == 1.0

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            LinearScore([1.0, 2.0]).value([1.0, 2.0, 3.0])

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        for f in score_zoo(rng):
            x = rng.standard_normal((5, f.dim))
            np.testing.assert_allclose(f.value(x), [f.value(r) for r in x], rtol=1e-13, atol=1e-13)


class TestScoreGradients:
    def test_additive_cos(self):
        np.testing.assert_allclose(AdditiveSinScore(2).gradient([np.pi / 2, 0.0]), [0.0, 1.0], atol=1e-15)

    def test_quadratic_is_hx(self):
        h = random_spd(np.random.default_rng(1), 3)
        x = np.array([0.4, -2.0, 1.5])
        np.testing.assert_allclose(QuadraticScore(h).gradient(x), h @ x, rtol=1e-14)

    def test_mlp_matches_finite_difference(self):
        f = MlpScore.random(4, (16,), np.random.default_rng(2))
        x = np.random.default_rng(3).standard_normal(4)
        assert np.max(np.abs(f.gradient(x) - finite_diff_gradient(f, x))) < 1e-5

    def test_gradient_consistency_every_kind(self):
        rng = np.random.default_rng(4)
        for f in score_zoo(rng):
            for x in rng.uniform(-2, 2, size=(100, f.dim)):
                g = f.gradient(x)
                err = np.max(np.abs(g - finite_diff_gradient(f, x)))
                assert err < 1e-5 * (1 + np.max(np.abs(g))), f.kind

    def test_composite_linearity_exact(self):
        rng = np.random.default_rng(5)
        f, g = MlpScore.random(3, (5,), rng), AdditiveSinScore(3, rng.standard_normal(3))
        a, b = 1.7, -0.3
        h = a * f + b * g
        assert isinstance(h, CompositeScore) and len(h.terms) == 2
        x = rng.standard_normal((20, 3))
        assert np.array_equal(h.value(x), a * f.value(x) + b * g.value(x))
        assert np.array_equal(h.gradient(x), a * f.gradient(x) + b * g.gradient(x))

    def test_hessian_bounds(self):
        assert LinearScore([1.0, 2.0]).hessian_bound() == 0.0
        assert AdditiveSinScore(2, [0.5, -3.0]).hessian_bound() == 3.0
        assert QuadraticScore(np.diag([1.0, -4.0])).hessian_bound() == pytest.approx(4.0)


class TestFields:
    def test_constant(self):
        f = ConstantField([1.0, -1.0])
        for x, t in [([0.0, 0.0], 0.0), ([5.0, 3.0], 0.7), ([-1.0, 2.0], 1.0)]:
            np.testing.assert_array_equal(f.eval(x, t), [1.0, -1.0])

    def test_straight_pair(self):
        z0, z1 = np.array([1.0, 2.0]), np.array([-1.0, 5.0])
        f = StraightPairField(z0, z1)
        np.testing.assert_array_equal(f.eval([9.0, 9.0], 0.3), z1 - z0)

    def test_gaussian_identity_is_zero(self):
        g = Gaussian(np.array([1.0, -2.0]), np.array([[2.0, 0.3], [0.3, 1.0]]))
        v = GaussianOTField(g, g).eval(np.array([[0.5, 0.5], [3.0, -1.0]]), 0.4)
        np.testing.assert_allclose(v, 0.0, atol=1e-14)

    def test_affine(self):
        f = AffineField(np.array([[0.0, 1.0], [-1.0, 0.0]]), [1.0, 0.0])
        np.testing.assert_array_equal(f.eval([2.0, 3.0], 0.5), [4.0, -2.0])

    @pytest.mark.parametrize("t", [-0.1, 1.1, float("nan")])
    def test_time_out_of_range(self, t):
        with pytest.raises(TimeOutOfRange):
            ConstantField([1.0]).eval([0.0], t)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            ConstantField([1.0, 2.0]).eval([0.0], 0.5)

    def test_bounded_tanh_norm(self):
        u = BoundedTanhField.random(6, np.random.default_rng(0))
        x = np.random.default_rng(1).standard_normal((200, 6)) * 5
        assert np.all(np.linalg.norm(u.eval(x, 0.5), axis=1) <= 1.0)

    def test_perturbed(self):
        base, pert = ConstantField([1.0, 1.0]), ConstantField([0.0, 2.0])
        np.testing.assert_array_equal(PerturbedField(base, pert, 0.5).eval([0.0, 0.0], 0.2), [1.0, 2.0])


class TestMlpSpec:
    def test_param_count(self):
        spec = MlpSpec(10)
        assert spec.layer_sizes == (11, 64, 64, 10)
        assert spec.param_count == 11 * 64 + 64 + 64 * 64 + 64 + 64 * 10 + 10

    def test_fourier_embedding(self):
        spec = MlpSpec(3, (4,), time_embedding="fourier", fourier_features=2)
        e = spec.embed(np.zeros((1, 3)), 0.25)
        np.testing.assert_allclose(e[0, 3:], [1.0, 0.0, 0.0, -1.0], atol=1e-15)
        assert spec.embed_dim == 7

    def test_roundtrip_dict(self):
        spec = MlpSpec(5, (7, 3), time_embedding="fourier", fourier_features=4)
        assert MlpSpec.from_dict(spec.to_dict()) == spec

    def test_invalid(self):
        with pytest.raises(ValueError):
            MlpSpec(3, activation="relu")
        with pytest.raises(ValueError):
            MlpSpec(3, time_embedding="fourier")

    def test_init_bounds(self):
        params = init_params((5, 20, 2), np.random.default_rng(0))
        assert np.abs(params[0][0]).max() <= 1 / math.sqrt(5)
        assert np.abs(params[1][0]).max() <= 1 / math.sqrt(20)


def _fd_param_grads(spec, params, x, t, target, h=1e-6):
    out = []
    for i, (w, b) in enumerate(params):
        pair = []
        for which, arr in ((0, w), (1, b)):
            g = np.empty_like(arr)
            for idx in np.ndindex(arr.shape):
                vals = []
                for sgn in (1, -1):
                    p2 = [(ww.copy(), bb.copy()) for ww, bb in params]
                    p2[i][which][idx] += sgn * h
                    vals.append(mlp_param_gradients(spec, p2, x, t, target)[0])
                g[idx] = (vals[0] - vals[1]) / (2 * h)
            pair.append(g)
        out.append(pair)
    return out


class TestParamGradients:
    def test_zero_network(self):
        spec = MlpSpec(3, (4,))
        params = [(np.zeros((4, 4)), np.zeros(4)), (np.zeros((4, 3)), np.zeros(3))]
        loss, grads = mlp_param_gradients(spec, params, np.array([0.5, -1.0, 2.0]), 0.3, np.zeros(3))
        assert loss == 0.0
        assert all(np.all(gw == 0) and np.all(gb == 0) for gw, gb in grads)

    def test_single_linear_layer_closed_form(self):
        spec = MlpSpec(1, ())
        w = np.array([[0.7], [-0.2]])
        x, t, y = np.array([1.5]), 0.4, np.array([0.3])
        loss, grads = mlp_param_gradients(spec, [(w, np.zeros(1))], x, t, y)
        xt = np.array([1.5, 0.4])
        r = float(xt @ w[:, 0]) - 0.3
        assert loss == pytest.approx(r * r, rel=1e-14)
        np.testing.assert_allclose(grads[0][0][:, 0], 2 * r * xt, rtol=1e-13)
        np.testing.assert_allclose(grads[0][1], [2 * r], rtol=1e-13)

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_difference_every_parameter(self, seed):
        rng = np.random.default_rng(seed)
        spec = MlpSpec(3, (8,)) if seed % 2 == 0 else MlpSpec(3, (5, 4), time_embedding="fourier", fourier_features=2)
        params = init_params(spec.layer_sizes, rng)
        x, target, t = rng.standard_normal(3), rng.standard_normal(3), float(rng.uniform())
        _, grads = mlp_param_gradients(spec, params, x, t, target)
        fd = _fd_param_grads(spec, params, x, t, target)
        for (gw, gb), (fw, fb) in zip(grads, fd):
            for g, f in ((gw, fw), (gb, fb)):
                assert np.max(np.abs(g - f)) <= 1e-5 * (1 + np.max(np.abs(f)))

    def test_batch_loss_is_mean(self):
        rng = np.random.default_rng(3)
        spec = MlpSpec(2, (4,))
        params = init_params(spec.layer_sizes, rng)
        x, y, t = rng.standard_normal((6, 2)), rng.standard_normal((6, 2)), rng.uniform(size=6)
        loss, _ = mlp_loss_and_grads(spec, params, x, t, y)
        single = [mlp_param_gradients(spec, params, x[i], t[i], y[i])[0] for i in range(6)]
        assert loss == pytest.approx(np.mean(single), rel=1e-13)

    def test_dim_mismatch(self):
        spec = MlpSpec(2, (3,))
        with pytest.raises(DimMismatch):
            mlp_param_gradients(spec, init_params(spec.layer_sizes, np.random.default_rng(0)), np.zeros(3), 0.0,
                                np.zeros(3))


class TestSerialization:
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_state_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        models = score_zoo(rng) + [
            ConstantField(rng.standard_normal(3)),
            AffineField(rng.standard_normal((3, 3)), rng.standard_normal(3)),
            StraightPairField(rng.standard_normal(3), rng.standard_normal(3)),
            MlpField.initialize(MlpSpec(3, (5,)), rng),
            BoundedTanhField.random(3, rng),
        ]
        for m in models:
            meta, arrays = m.state()
            m2 = model_from_state(meta, arrays)
            x = rng.standard_normal((4, m.dim))
            if hasattr(m, "value"):
                assert np.array_equal(m.value(x), m2.value(x))
            else:
                assert np.array_equal(m.eval(x, 0.3), m2.eval(x, 0.3))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            model_from_state({"kind": "nope"}, {})
