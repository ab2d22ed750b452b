"""Closed-form optimal transport between Gaussians.

For ``N(m0, S0) -> N(m1, S1)`` the quadratic-cost Monge map is affine,
``T(x) = A (x - m0) + m1`` with
``A = S0^{-1/2} (S0^{1/2} S1 S0^{1/2})^{1/2} S0^{-1/2}``, and particles
travel on straight segments ``x_t = (1 - t) x0 + t T(x0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, NotSpd, SingularInterpolation
from .models import VelocityField, _frozen, check_time, register_kind
from .tensor import (
    MAX_CONDITION,
    as_vector,
    check_spd_input,
    cholesky,
    condition_number,
    sym_matrix_inv_sqrt,
    sym_matrix_sqrt,
)


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = as_vector(self.mean, name="mean")
        cov = check_spd_input(self.cov)
        if cov.shape != (mean.size, mean.size):
            raise DimMismatch(f"mean has dimension {mean.size} but covariance is {cov.shape}")
        cov = 0.5 * (cov + cov.T)
        chol = cholesky(cov)
        if condition_number(cov) > MAX_CONDITION:
            raise NotSpd(f"covariance condition number exceeds {MAX_CONDITION:g}")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(cov))
        object.__setattr__(self, "_chol", _frozen(chol))

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def standard(cls, d: int) -> "Gaussian":
        return cls(np.zeros(d), np.eye(d))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.dim)) @ self._chol.T

    def __eq__(self, other):
        if not isinstance(other, Gaussian):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "dim": self.dim}


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``x -> A (x - center) + offset``."""

    matrix: np.ndarray
    center: np.ndarray
    offset: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (x - self.center) @ self.matrix.T + self.offset

    def inverse(self, y):
        y = np.asarray(y, dtype=np.float64)
        return np.linalg.solve(self.matrix, (y - self.offset).T).T + self.center


def _check_pair(g0: Gaussian, g1: Gaussian):
    if g0.dim != g1.dim:
        raise DimMismatch(f"Gaussians have dimensions {g0.dim} and {g1.dim}")


def gaussian_w2_squared(g0: Gaussian, g1: Gaussian) -> float:
    """``||m1 - m0||^2 + tr(S0 + S1 - 2 (S0^{1/2} S1 S0^{1/2})^{1/2})``."""
    _check_pair(g0, g1)
    r0 = sym_matrix_sqrt(g0.cov)
    cross = sym_matrix_sqrt(r0 @ g1.cov @ r0)
    dm = g1.mean - g0.mean
    val = float(dm @ dm + np.trace(g0.cov) + np.trace(g1.cov) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def brenier_map(g0: Gaussian, g1: Gaussian) -> AffineMap:
    _check_pair(g0, g1)
    if g0 == g1:
        a = np.eye(g0.dim)
    else:
        r0 = sym_matrix_sqrt(g0.cov)
        r0_inv = sym_matrix_inv_sqrt(g0.cov)
        a = r0_inv @ sym_matrix_sqrt(r0 @ g1.cov @ r0) @ r0_inv
        a = 0.5 * (a + a.T)
    return AffineMap(_frozen(a), g0.mean, g1.mean)


def displacement_interpolation(g0: Gaussian, g1: Gaussian, t: float) -> Gaussian:
    """Law of ``(1 - t) x0 + t T(x0)`` for ``x0 ~ g0``."""
    t = check_time(t)
    if t == 0.0:
        return g0
    if t == 1.0:
        return g1
    a = brenier_map(g0, g1).matrix
    m_t = (1.0 - t) * np.eye(g0.dim) + t * a
    return Gaussian((1.0 - t) * g0.mean + t * g1.mean, m_t @ g0.cov @ m_t.T)


class GaussianOTField(VelocityField):
    """Oracle velocity ``v*_t(x) = (A - I) M_t^{-1} (x - mu_t) + (m1 - m0)``, ``M_t = (1 - t) I + t A``.

    Along the particle ``x_t = (1 - t) x0 + t T(x0)`` this is the constant
    displacement ``T(x0) - x0``.
    """

    kind = "gaussian-ot-oracle"

    def __init__(self, g0: Gaussian, g1: Gaussian):
        _check_pair(g0, g1)
        self.g0, self.g1 = g0, g1
        self.dim = g0.dim
        self.transport = brenier_map(g0, g1)
        a = self.transport.matrix
        self._a_minus_i = a - np.eye(self.dim)
        self._shift = g1.mean - g0.mean
        # A is symmetric: M_t = Q diag((1-t) + t lam) Q^T
        self._lam, self._q = np.linalg.eigh(a)
        if self._lam.min() <= 0:
            raise SingularInterpolation("transport matrix is not positive definite")

    def _eval(self, xb, t):
        mu_t = (1.0 - t) * self.g0.mean + t * self.g1.mean
        diag = (1.0 - t) + t * self._lam
        if diag.min() / diag.max() < 1e-12:
            raise SingularInterpolation(f"interpolation matrix singular at t={t}")
        z = ((xb - mu_t) @ self._q) / diag
        return (z @ self._q.T) @ self._a_minus_i.T + self._shift

    def preimage(self, x1):
        """Starting point ``x0`` with ``T(x0) = x1``."""
        return self.transport.inverse(x1)

    def state(self):
        meta = {"kind": self.kind, "dim": self.dim}
        arrays = {"m0": self.g0.mean, "S0": self.g0.cov, "m1": self.g1.mean, "S1": self.g1.cov}
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(Gaussian(arrays["m0"], arrays["S0"]), Gaussian(arrays["m1"], arrays["S1"]))


register_kind(GaussianOTField)


def oracle_velocity(g0: Gaussian, g1: Gaussian, x, t: float) -> np.ndarray:
    return GaussianOTField(g0, g1).eval(x, t)
