"""Aumann-Shapley path attribution on discrete trajectories.

The estimator is the left Riemann sum

    psi_i = sum_{k=0}^{K-1} d_i f(x_k) * (x_{k+1,i} - x_{k,i}),

so one attribution costs ``K`` gradient evaluations at the stored states.
Integrated Gradients is the same sum on a sampled straight line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyInput
from .models import CompositeScore, ScoreModel, VelocityField, _frozen
from .paths import CurveSpec, Trajectory, reference_endpoint_states, reference_endpoint_trajectory, sample_curve

DEFAULT_K = 50
QUADRATURES = ("left", "midpoint")


@dataclass(frozen=True, eq=False)
class AttributionVector:
    values: np.ndarray
    start: np.ndarray
    end: np.ndarray
    score_start: float
    score_end: float
    K: int
    method: str = "path"
    quadrature: str = "left"

    def __post_init__(self):
        for name in ("values", "start", "end"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if not (self.values.shape == self.start.shape == self.end.shape):
            raise DimMismatch("attribution values and endpoints differ in dimension")

    @property
    def dim(self) -> int:
        return self.values.size

    @property
    def total(self) -> float:
        return float(np.sum(self.values))

    @property
    def score_change(self) -> float:
        return self.score_end - self.score_start

    @property
    def residual(self) -> float:
        """``|sum_i psi_i - (f(x_K) - f(x_0))|``."""
        return abs(self.total - self.score_change)

    def metadata(self) -> dict:
        return {"method": self.method, "K": self.K, "quadrature": self.quadrature,
                "score_start": self.score_start, "score_end": self.score_end}


def _accumulate(score: ScoreModel, states: np.ndarray, quadrature: str) -> np.ndarray:
    """Riemann sum over axis 0 of ``states`` (``(K+1, d)`` or ``(K+1, n, d)``)."""
    if isinstance(score, CompositeScore):
        # linear in the score: combine per-term sums so the combination is exact
        total = 0
        for a, f in score.terms:
            total = total + a * _accumulate(f, states, quadrature)
        return total
    inc = np.diff(states, axis=0)
    if quadrature == "left":
        nodes = states[:-1]
    elif quadrature == "midpoint":
        nodes = 0.5 * (states[:-1] + states[1:])
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}; expected one of {QUADRATURES}")
    shape = nodes.shape
    grads = score.gradient(nodes.reshape(-1, shape[-1])).reshape(shape)
    return np.sum(grads * inc, axis=0)


def path_attribution(score: ScoreModel, traj: Trajectory, quadrature: str = "left",
                     method: str = "path") -> AttributionVector:
    if traj.dim != score.dim:
        raise DimMismatch(f"trajectory dimension {traj.dim} differs from score dimension {score.dim}")
    values = _accumulate(score, traj.states, quadrature)
    return AttributionVector(values, traj.start, traj.end, score.value(traj.start), score.value(traj.end),
                             traj.K, method, quadrature)


def batch_path_attribution(score: ScoreModel, states: np.ndarray, quadrature: str = "left") -> np.ndarray:
    """Attributions for ``n`` trajectories stacked as ``(K+1, n, d)``; returns ``(n, d)``."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 3 or states.shape[2] != score.dim:
        raise DimMismatch(f"expected (K+1, n, {score.dim}) states, got {states.shape}")
    return _accumulate(score, states, quadrature)


def transport_flow_attribution(score: ScoreModel, field: VelocityField, x1, K: int = DEFAULT_K,
                               method: str = "rk4", endpoint_mode: str = "reversed-backward",
                               quadrature: str = "left") -> AttributionVector:
    """Trace the flow back from ``x1`` to its reference point and attribute along that path."""
    traj = reference_endpoint_trajectory(field, x1, K, method, endpoint_mode)
    return path_attribution(score, traj, quadrature, method="transport-flow")


def transport_flow_batch(score: ScoreModel, field: VelocityField, x1, K: int = DEFAULT_K,
                         method: str = "rk4", endpoint_mode: str = "reversed-backward",
                         quadrature: str = "left") -> tuple[np.ndarray, np.ndarray]:
    """Batched transport-flow attribution: returns ``(attributions (n, d), states (K+1, n, d))``."""
    states = reference_endpoint_states(field, np.atleast_2d(x1), K, method, endpoint_mode)
    return batch_path_attribution(score, states, quadrature), states


def integrated_gradients(score: ScoreModel, x0, x1, K: int = DEFAULT_K, quadrature: str = "left") -> AttributionVector:
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape or x0.ndim != 1:
        raise DimMismatch("baseline and input must be vectors of equal dimension")
    traj = sample_curve(CurveSpec.straight(x0, x1), K)
    return path_attribution(score, traj, quadrature, method="ig")


def completeness_residual(attrs) -> float:
    """Mean absolute completeness residual ``R_eff`` over a batch of attributions."""
    attrs = list(attrs)
    if not attrs:
        raise EmptyInput("completeness_residual needs at least one attribution")
    return float(np.mean([a.residual for a in attrs]))
