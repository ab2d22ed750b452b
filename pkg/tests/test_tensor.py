import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otflow.errors import FormatError, NotSpd, ShapeMismatch
from otflow.models import AdditiveSinScore, LinearScore, QuadraticScore
from otflow.tensor import (
    GridImage,
    RngStream,
    as_vector,
    cholesky,
    condition_number,
    decode_otf1,
    encode_otf1,
    finite_diff_gradient,
    random_spd,
    sym_matrix_inv_sqrt,
    sym_matrix_sqrt,
)


def rel_fro(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestCholesky:
    def test_identity(self):
        assert np.array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), rtol=0, atol=1e-15)

    def test_random_reconstruction(self):
        rng = np.random.default_rng(1)
        b = rng.standard_normal((5, 5))
        a = b.T @ b + np.eye(5)
        L = cholesky(a)
        assert np.allclose(L, np.tril(L))
        assert rel_fro(L @ L.T, a) < 1e-10

    @pytest.mark.parametrize("m", [np.array([[1.0, 2.0], [2.0, 1.0]]), -np.eye(2), np.zeros((2, 2))])
    def test_not_spd(self, m):
        with pytest.raises(NotSpd):
            cholesky(m)

    def test_asymmetric_rejected(self):
        with pytest.raises(NotSpd):
            cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))


class TestMatrixSqrt:
    def test_identity(self):
        np.testing.assert_allclose(sym_matrix_sqrt(np.eye(4)), np.eye(4), atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(sym_matrix_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)

    def test_random_d10(self):
        m = random_spd(np.random.default_rng(2), 10, 0.1, 5.0)
        b = sym_matrix_sqrt(m)
        assert np.allclose(b, b.T)
        assert np.linalg.eigvalsh(b).min() > 0
        assert rel_fro(b @ b, m) < 1e-8

    def test_inverse_sqrt(self):
        m = random_spd(np.random.default_rng(3), 6)
        r = sym_matrix_inv_sqrt(m)
        assert rel_fro(r @ m @ r, np.eye(6)) < 1e-10

    def test_not_spd(self):
        with pytest.raises(NotSpd):
            sym_matrix_sqrt(np.diag([1.0, -1.0]))

    def test_condition_number(self):
        assert condition_number(np.diag([1.0, 100.0])) == pytest.approx(100.0)

    @settings(max_examples=50, deadline=None)
    @given(d=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
    def test_roundtrip_property(self, d, seed):
        m = random_spd(np.random.default_rng(seed), d, 0.05, 20.0)
        L = cholesky(m)
        assert rel_fro(L @ L.T, m) < 1e-10
        b = sym_matrix_sqrt(m)
        assert rel_fro(b @ b, m) < 1e-8


class TestFiniteDifference:
    def test_half_norm_squared(self):
        f = QuadraticScore(np.eye(2))
        np.testing.assert_allclose(finite_diff_gradient(f, [1.0, 2.0], 1e-5), [1.0, 2.0], atol=1e-8)

    def test_constant(self):
        f = LinearScore(np.zeros(3), bias=4.2)
        assert np.array_equal(finite_diff_gradient(f, [0.3, -1.0, 8.0]), np.zeros(3))

    def test_additive_sin(self):
        g = finite_diff_gradient(AdditiveSinScore(2), [0.3, -1.1], 1e-5)
        np.testing.assert_allclose(g, [np.cos(0.3), np.cos(-1.1)], atol=1e-8)

    def test_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_gradient(AdditiveSinScore(2), [0.0, 0.0], 0.0)


class TestRngStream:
    def test_bit_identical_million_draws(self):
        a = RngStream(123, 4).generator().random(10**6)
        b = RngStream(123, 4).generator().random(10**6)
        assert a.tobytes() == b.tobytes()

    def test_streams_differ(self):
        a = RngStream(123, 0).generator().random(16)
        b = RngStream(123, 1).generator().random(16)
        c = RngStream(124, 0).generator().random(16)
        d = RngStream(123, 0).child(1).generator().random(16)
        assert not np.array_equal(a, b) and not np.array_equal(a, c) and not np.array_equal(a, d)

    def test_validation(self):
        with pytest.raises(ValueError):
            RngStream(1, -1)
        with pytest.raises(ValueError):
            RngStream(-1)


class TestGridImage:
    def test_promotes_2d(self):
        img = GridImage(np.zeros((3, 4)))
        assert img.shape == (3, 4, 1) and img.channels == 1

    def test_from_flat_row_major(self):
        img = GridImage.from_flat(np.arange(6.0), 2, 3)
        assert img.plane()[1, 0] == 3.0
        np.testing.assert_array_equal(img.flat(), np.arange(6.0))

    def test_size_mismatch(self):
        with pytest.raises(ShapeMismatch):
            GridImage.from_flat(np.arange(5.0), 2, 3)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            GridImage(np.array([[np.nan]]))

    def test_immutable(self):
        img = GridImage(np.ones((2, 2)))
        with pytest.raises(ValueError):
            img.values[0, 0, 0] = 3.0


class TestOtf1:
    def test_layout(self):
        blob = encode_otf1(np.array([[1.0, 2.0, 3.0]]))
        assert blob[:4] == b"OTF1"
        assert blob[4:8] == (2).to_bytes(4, "little")
        assert blob[8:12] == (1).to_bytes(4, "little") and blob[12:16] == (3).to_bytes(4, "little")
        assert np.frombuffer(blob[16:], "<f8").tolist() == [1.0, 2.0, 3.0]

    @settings(max_examples=50, deadline=None)
    @given(shape=st.lists(st.integers(0, 4), min_size=0, max_size=4), seed=st.integers(0, 1000))
    def test_roundtrip_bit_identical(self, shape, seed):
        a = np.asarray(np.random.default_rng(seed).standard_normal(shape))
        out = decode_otf1(encode_otf1(a))
        assert out.shape == a.shape and out.tobytes() == a.tobytes()

    def test_bad_magic(self):
        blob = bytearray(encode_otf1(np.ones(3)))
        blob[:4] = b"XXXX"
        with pytest.raises(FormatError):
            decode_otf1(bytes(blob))

    def test_truncated(self):
        with pytest.raises(FormatError):
            decode_otf1(encode_otf1(np.ones(3))[:-1])
        with pytest.raises(FormatError):
            decode_otf1(b"OTF")


def test_as_vector_rejects_non_finite():
    with pytest.raises(ValueError):
        as_vector([1.0, np.inf])
