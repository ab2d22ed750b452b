"""Discrete trajectories, ODE tracing of velocity fields, and analytic test curves.

All grids are uniform: ``t_k = k / K``, ``dt = 1 / K``.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .errors import BadReparameterization, DimMismatch, NonFiniteState
from .models import VelocityField, _frozen

DIVERGENCE_BOUND = 1e12
METHODS = ("euler", "rk4")
ENDPOINT_MODES = ("reversed-backward", "forward-corrected")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x_0 .. x_K`` on the grid ``t_k = k / K``, stored in forward time order."""

    states: np.ndarray
    method: str = "given"
    mode: str | None = None
    field_id: str | None = None

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 2 or s.shape[1] < 1:
            raise DimMismatch(f"trajectory needs shape (K+1, d) with K >= 1, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise NonFiniteState("trajectory contains non-finite states")
        object.__setattr__(self, "states", _frozen(s))

    @property
    def K(self) -> int:
        return self.states.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def dt(self) -> float:
        return 1.0 / self.K

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) / self.K

    @property
    def start(self) -> np.ndarray:
        return self.states[0]

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]

    def increments(self) -> np.ndarray:
        return np.diff(self.states, axis=0)

    def sidecar(self) -> dict:
        return {"K": self.K, "method": self.method, "field_id": self.field_id, "mode": self.mode}


def _guard(x: np.ndarray, k: int):
    if not np.all(np.isfinite(x)) or np.abs(x).max() > DIVERGENCE_BOUND:
        raise NonFiniteState(f"state diverged at step {k} (|x| > {DIVERGENCE_BOUND:g} or non-finite)")


def _step(field: VelocityField, x: np.ndarray, t: float, h: float, method: str) -> np.ndarray:
    if method == "euler":
        return x + h * field._eval(x, t)
    # classical RK4; h < 0 integrates backward in time
    k1 = field._eval(x, t)
    k2 = field._eval(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = field._eval(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = field._eval(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _prepare(field, x, K, method):
    if K < 1:
        raise ValueError("K must be >= 1")
    if method not in METHODS:
        raise ValueError(f"unknown integration method {method!r}; expected one of {METHODS}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != field.dim:
        raise DimMismatch(f"initial state shape {x.shape} does not match field dimension {field.dim}")
    _guard(xb, 0)
    return xb, single


def trace(field: VelocityField, x, K: int, method: str = "rk4", backward: bool = False,
          keep_states: bool = True) -> np.ndarray:
    """Integrate ``dx/dt = v(x, t)`` for one point ``(d,)`` or a batch ``(n, d)``.

    Forward starts at ``t = 0``; backward starts at ``t = 1``.  Returns the
    states in forward time order, shape ``(K+1, ...)``, or only the final
    integrated state (``x(1)`` forward, ``x(0)`` backward) when
    ``keep_states`` is false.
    """
    xb, single = _prepare(field, x, K, method)
    h = -1.0 / K if backward else 1.0 / K
    out = [xb] if keep_states else None
    cur = xb
    for j in range(K):
        k = K - j if backward else j
        cur = _step(field, cur, k / K, h, method)
        _guard(cur, j + 1)
        if keep_states:
            out.append(cur)
    if not keep_states:
        return cur[0] if single else cur
    states = np.stack(out[::-1] if backward else out)
    return states[:, 0] if single else states


def flow_map(field: VelocityField, x, K: int, method: str = "rk4", backward: bool = False) -> np.ndarray:
    return trace(field, x, K, method, backward, keep_states=False)


def integrate_forward(field: VelocityField, x0, K: int, method: str = "rk4") -> Trajectory:
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 1:
        raise DimMismatch("integrate_forward takes a single state; use trace() for batches")
    return Trajectory(trace(field, x0, K, method), method=method, mode="forward", field_id=field.kind)


def integrate_backward(field: VelocityField, x1, K: int, method: str = "rk4") -> Trajectory:
    """Integrate from ``t = 1`` down to ``t = 0``; ``states[K]`` is ``x1`` exactly."""
    x1 = np.asarray(x1, dtype=np.float64)
    if x1.ndim != 1:
        raise DimMismatch("integrate_backward takes a single state; use trace() for batches")
    return Trajectory(trace(field, x1, K, method, backward=True), method=method, mode="backward",
                      field_id=field.kind)


def reference_endpoint_states(field: VelocityField, x1, K: int, method: str = "rk4",
                              mode: str = "reversed-backward") -> np.ndarray:
    """Batched form of :func:`reference_endpoint_trajectory`; returns ``(K+1, [n,] d)`` states."""
    if mode not in ENDPOINT_MODES:
        raise ValueError(f"unknown endpoint mode {mode!r}; expected one of {ENDPOINT_MODES}")
    x1 = np.asarray(x1, dtype=np.float64)
    back = trace(field, x1, K, method, backward=True)
    if mode == "reversed-backward":
        return back
    fwd = trace(field, back[0], K, method)
    fwd[-1] = x1
    return fwd


def reference_endpoint_trajectory(field: VelocityField, x1, K: int, method: str = "rk4",
                                  mode: str = "reversed-backward") -> Trajectory:
    """Path ending at the observed input ``x1`` that starts at its recovered reference point.

    ``reversed-backward`` reuses the backward trace; ``forward-corrected``
    re-integrates forward from the recovered ``x0`` and overwrites the last
    state with ``x1``.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    if x1.ndim != 1:
        raise DimMismatch("expected a single observed input")
    return Trajectory(reference_endpoint_states(field, x1, K, method, mode), method=method, mode=mode,
                      field_id=field.kind)


# --------------------------------------------------------------------------
# Analytic curves
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CurveSpec:
    """An analytic curve ``c(s)``, ``s in [0, 1]``, optionally composed with a reparameterization.

    ``sigma`` is either a callable or grid values on a uniform grid of
    ``[0, 1]`` (linearly interpolated between grid points).
    """

    kind: str
    points: np.ndarray
    params: dict = dc_field(default_factory=dict)
    sigma: Callable | np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("straight", "arc", "polyline"):
            raise ValueError(f"unknown curve kind {self.kind!r}")
        object.__setattr__(self, "points", _frozen(self.points))
        if self.sigma is not None and not callable(self.sigma):
            grid = np.asarray(self.sigma, dtype=np.float64)
            _check_sigma(grid)
            object.__setattr__(self, "sigma", _frozen(grid))

    @classmethod
    def straight(cls, start, end) -> "CurveSpec":
        return cls("straight", np.stack([np.asarray(start, float), np.asarray(end, float)]))

    @classmethod
    def polyline(cls, vertices) -> "CurveSpec":
        return cls("polyline", np.asarray(vertices, dtype=np.float64))

    @classmethod
    def arc(cls, center, u, w, radius: float, theta0: float, theta1: float) -> "CurveSpec":
        """``center + radius (cos(th) u + sin(th) w)`` for ``th`` from ``theta0`` to ``theta1``."""
        return cls("arc", np.stack([np.asarray(center, float), np.asarray(u, float), np.asarray(w, float)]),
                   {"radius": float(radius), "theta0": float(theta0), "theta1": float(theta1)})

    @classmethod
    def arc_between(cls, start, end, normal, half_angle: float = np.pi / 4) -> "CurveSpec":
        """Circular arc from ``start`` to ``end`` bulging toward ``normal`` (projected off the chord)."""
        start, end = np.asarray(start, float), np.asarray(end, float)
        chord = end - start
        length = np.linalg.norm(chord)
        if length == 0:
            raise ValueError("arc endpoints coincide")
        e = chord / length
        n = np.asarray(normal, float)
        n = n - (n @ e) * e
        if np.linalg.norm(n) < 1e-12:
            raise ValueError("normal is parallel to the chord")
        n = n / np.linalg.norm(n)
        r = length / (2.0 * np.sin(half_angle))
        center = 0.5 * (start + end) - n * r * np.cos(half_angle)
        # the arc runs through center + r * n at its midpoint
        return cls.arc(center, n, e, r, -half_angle, half_angle)

    def with_sigma(self, sigma) -> "CurveSpec":
        return CurveSpec(self.kind, self.points, dict(self.params), sigma)

    def point(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "straight":
            a, b = self.points
            return a + s[..., None] * (b - a)
        if self.kind == "arc":
            c, u, w = self.points
            p = self.params
            th = p["theta0"] + s * (p["theta1"] - p["theta0"])
            return c + p["radius"] * (np.cos(th)[..., None] * u + np.sin(th)[..., None] * w)
        # polyline parameterized by arc length
        v = self.points
        seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()
        s = np.clip(s, 0.0, 1.0)
        idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
        frac = (s - cum[idx]) / np.where(seg[idx] > 0, cum[idx + 1] - cum[idx], 1.0)
        return v[idx] + frac[..., None] * (v[idx + 1] - v[idx])

    def reparam(self, t: np.ndarray) -> np.ndarray:
        if self.sigma is None:
            return t
        if callable(self.sigma):
            s = np.asarray(self.sigma(t), dtype=np.float64)
            _check_sigma(s, grid_endpoints_only=False)
            return s
        grid = self.sigma
        return np.interp(t, np.linspace(0.0, 1.0, grid.size), grid)


def _check_sigma(values: np.ndarray, grid_endpoints_only: bool = True):
    if values.ndim != 1 or values.size < 2:
        raise BadReparameterization("reparameterization needs at least two grid values")
    if values[0] != 0.0 or values[-1] != 1.0:
        raise BadReparameterization("reparameterization must satisfy sigma(0)=0 and sigma(1)=1")
    if np.any(np.diff(values) <= 0):
        raise BadReparameterization("reparameterization must be strictly increasing")


def sample_curve(curve: CurveSpec, K: int) -> Trajectory:
    if K < 1:
        raise ValueError("K must be >= 1")
    t = np.arange(K + 1) / K
    s = curve.reparam(t)
    states = curve.point(s)
    # pin the exact endpoints against rounding in the parameterization
    states[0] = curve.point(np.array([0.0]))[0]
    states[-1] = curve.point(np.array([1.0]))[0]
    return Trajectory(states, method="analytic", mode=curve.kind)
