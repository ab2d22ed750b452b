"""Differentiable scalar scores and time-dependent velocity fields.

Every score exposes ``value`` and an analytic input ``gradient``; every
field exposes ``eval(x, t)``.  All of them accept a single point of shape
``(d,)`` or a batch of shape ``(n, d)`` and return matching shapes.

Models are immutable after construction.  ``state()`` / ``from_state``
give the (JSON meta, named arrays) pair used for serialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, TimeOutOfRange
from .tensor import GridImage

_TIME_EPS = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Return ``x`` as an ``(n, dim)`` batch and whether the input was a single point."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != dim:
        raise DimMismatch(f"input has shape {x.shape}, model dimension is {dim}")
    return xb, single


# --------------------------------------------------------------------------
# Scores
# --------------------------------------------------------------------------


class ScoreModel:
    kind = "abstract"
    dim: int

    def value(self, x):
        xb, single = _points(x, self.dim)
        v = self._value(xb)
        return float(v[0]) if single else v

    def gradient(self, x):
        xb, single = _points(x, self.dim)
        g = self._gradient(xb)
        return g[0] if single else g

    def hessian_bound(self) -> float | None:
        """Upper bound on the Hessian spectral norm, or ``None`` if unknown."""
        return None

    def _value(self, xb):
        raise NotImplementedError

    def _gradient(self, xb):
        raise NotImplementedError

    def __add__(self, other):
        return CompositeScore(((1.0, self), (1.0, other)))

    def __rmul__(self, a):
        return CompositeScore(((float(a), self),))


class AdditiveSinScore(ScoreModel):
    """``f(x) = b + sum_i w_i sin(x_i)``; ``w`` defaults to all ones."""

    kind = "additive-sin"

    def __init__(self, dim: int, weights=None, bias: float = 0.0):
        self.dim = int(dim)
        self.weights = _frozen(np.ones(self.dim) if weights is None else weights)
        if self.weights.shape != (self.dim,):
            raise DimMismatch("weights must have one entry per coordinate")
        self.bias = float(bias)

    def _value(self, xb):
        return self.bias + np.sin(xb) @ self.weights

    def _gradient(self, xb):
        return np.cos(xb) * self.weights

    def coordinate_terms(self, x):
        """The per-coordinate summands ``w_i sin(x_i)``."""
        return self.weights * np.sin(np.asarray(x, dtype=np.float64))

    def hessian_bound(self):
        return float(np.abs(self.weights).max())

    def state(self):
        return {"kind": self.kind, "dim": self.dim, "bias": self.bias}, {"weights": self.weights}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(meta["dim"], arrays["weights"], meta["bias"])


class LinearScore(ScoreModel):
    kind = "linear"

    def __init__(self, weights, bias: float = 0.0):
        self.weights = _frozen(weights)
        if self.weights.ndim != 1:
            raise DimMismatch("linear weights must be a vector")
        self.dim = self.weights.size
        self.bias = float(bias)

    def _value(self, xb):
        return self.bias + xb @ self.weights

    def _gradient(self, xb):
        return np.broadcast_to(self.weights, xb.shape).copy()

    def hessian_bound(self):
        return 0.0

    def state(self):
        return {"kind": self.kind, "dim": self.dim, "bias": self.bias}, {"weights": self.weights}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["weights"], meta["bias"])


class QuadraticScore(ScoreModel):
    """``f(x) = 1/2 (x - c)^T H (x - c)`` with symmetric ``H``."""

    kind = "quadratic"

    def __init__(self, hessian, center=None):
        h = np.asarray(hessian, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise DimMismatch("Hessian must be square")
        self.hessian = _frozen(0.5 * (h + h.T))
        self.dim = h.shape[0]
        self.center = _frozen(np.zeros(self.dim) if center is None else center)

    def _value(self, xb):
        z = xb - self.center
        return 0.5 * np.einsum("ni,ij,nj->n", z, self.hessian, z)

    def _gradient(self, xb):
        return (xb - self.center) @ self.hessian

    def hessian_bound(self):
        return float(np.abs(np.linalg.eigvalsh(self.hessian)).max())

    def state(self):
        return {"kind": self.kind, "dim": self.dim}, {"hessian": self.hessian, "center": self.center}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["hessian"], arrays["center"])


class CompositeScore(ScoreModel):
    """Linear combination ``sum_j a_j f_j`` kept as its terms, never folded."""

    kind = "composite"

    def __init__(self, terms):
        flat = []
        for a, f in terms:
            # splice only unit-weight composites; distributing a != 1 would change rounding
            if isinstance(f, CompositeScore) and a == 1.0:
                flat.extend(f.terms)
            else:
                flat.append((float(a), f))
        if not flat:
            raise ValueError("composite score needs at least one term")
        dims = {f.dim for _, f in flat}
        if len(dims) != 1:
            raise DimMismatch(f"composite terms have mixed dimensions {sorted(dims)}")
        self.terms = tuple(flat)
        self.dim = dims.pop()

    def _value(self, xb):
        return sum(a * f._value(xb) for a, f in self.terms)

    def _gradient(self, xb):
        return sum(a * f._gradient(xb) for a, f in self.terms)

    def hessian_bound(self):
        bounds = [f.hessian_bound() for _, f in self.terms]
        if any(b is None for b in bounds):
            return None
        return float(sum(abs(a) * b for (a, _), b in zip(self.terms, bounds)))

    def state(self):
        metas, arrays = [], {}
        for j, (a, f) in enumerate(self.terms):
            m, arr = f.state()
            metas.append({"coef": a, "model": m})
            arrays.update({f"t{j}.{k}": v for k, v in arr.items()})
        return {"kind": self.kind, "dim": self.dim, "terms": metas}, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        terms = []
        for j, t in enumerate(meta["terms"]):
            prefix = f"t{j}."
            sub = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
            terms.append((t["coef"], model_from_state(t["model"], sub)))
        return cls(terms)


# --------------------------------------------------------------------------
# Multilayer perceptron with hand-written reverse mode
# --------------------------------------------------------------------------

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
}


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a time-dependent MLP velocity field ``v(x, t)``.

    ``time_embedding="append"`` feeds ``[x, t]``; ``"fourier"`` feeds
    ``[x, sin(2 pi j t), cos(2 pi j t)]`` for ``j = 1..fourier_features``.
    """

    input_dim: int
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    time_embedding: str = "append"
    fourier_features: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("dimensions must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.time_embedding not in ("append", "fourier"):
            raise ValueError(f"unknown time embedding {self.time_embedding!r}")
        if self.time_embedding == "fourier" and self.fourier_features < 1:
            raise ValueError("fourier time embedding needs fourier_features >= 1")

    @property
    def embed_dim(self) -> int:
        if self.time_embedding == "append":
            return self.input_dim + 1
        return self.input_dim + 2 * self.fourier_features

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.embed_dim, *self.hidden, self.input_dim)

    @property
    def param_count(self) -> int:
        s = self.layer_sizes
        return sum((a + 1) * b for a, b in zip(s[:-1], s[1:]))

    def embed(self, xb: np.ndarray, t) -> np.ndarray:
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (xb.shape[0],))
        if self.time_embedding == "append":
            return np.concatenate([xb, t[:, None]], axis=1)
        j = np.arange(1, self.fourier_features + 1)
        ang = 2.0 * math.pi * t[:, None] * j
        return np.concatenate([xb, np.sin(ang), np.cos(ang)], axis=1)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "time_embedding": self.time_embedding,
            "fourier_features": self.fourier_features,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(d["input_dim"], tuple(d["hidden"]), d["activation"], d["time_embedding"], d["fourier_features"])


def init_params(layer_sizes, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Uniform ``(-1/sqrt(fan_in), 1/sqrt(fan_in))`` for weights and biases."""
    params = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        params.append((w, b))
    return params


def mlp_forward(params, inputs: np.ndarray, activation: str = "tanh"):
    """Forward pass; returns the output and the per-layer activations to back-propagate."""
    act, _ = _ACTIVATIONS[activation]
    acts = [inputs]
    h = inputs
    last = len(params) - 1
    for i, (w, b) in enumerate(params):
        z = h @ w + b
        h = z if i == last else act(z)
        acts.append(h)
    return h, acts


def mlp_backward(params, acts, dout: np.ndarray, activation: str = "tanh", need_params: bool = True):
    """Reverse-mode sweep: ``(param grads, grad w.r.t. inputs)`` for upstream ``dout``."""
    _, dact = _ACTIVATIONS[activation]
    grads = [None] * len(params)
    delta = dout
    for i in range(len(params) - 1, -1, -1):
        w, _ = params[i]
        if need_params:
            grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        delta = delta @ w.T
        if i > 0:
            delta = delta * dact(acts[i])
    return grads, delta


def mlp_loss_and_grads(spec: MlpSpec, params, x, t, target):
    """Mean over the batch of ``||v(x, t) - target||^2`` and its parameter gradients."""
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    yb = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if xb.shape[1] != spec.input_dim or yb.shape != xb.shape:
        raise DimMismatch(f"inputs {xb.shape} / targets {yb.shape} do not match input_dim={spec.input_dim}")
    n = xb.shape[0]
    out, acts = mlp_forward(params, spec.embed(xb, t), spec.activation)
    resid = out - yb
    loss = float(np.sum(resid * resid) / n)
    grads, _ = mlp_backward(params, acts, (2.0 / n) * resid, spec.activation)
    return loss, grads


def mlp_param_gradients(spec: MlpSpec, params, x, t: float, target):
    """Per-sample squared error ``||v(x, t) - target||^2`` and its gradient for every weight and bias."""
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if x.shape != (spec.input_dim,) or target.shape != x.shape:
        raise DimMismatch("x and target must both have shape (input_dim,)")
    return mlp_loss_and_grads(spec, params, x[None], np.array([t]), target[None])


def _params_state(params):
    arrays = {}
    for i, (w, b) in enumerate(params):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    return arrays


def _params_from_state(arrays, n_layers):
    return [(np.array(arrays[f"W{i}"]), np.array(arrays[f"b{i}"])) for i in range(n_layers)]


class MlpScore(ScoreModel):
    """Scalar tanh MLP score ``f(x)``."""

    kind = "mlp"

    def __init__(self, params, activation: str = "tanh"):
        self.params = [(_frozen(w), _frozen(b)) for w, b in params]
        self.activation = activation
        self.dim = self.params[0][0].shape[0]
        if self.params[-1][0].shape[1] != 1:
            raise DimMismatch("score MLP must have a single output")

    @classmethod
    def random(cls, dim: int, hidden=(32,), rng=None, scale: float = 1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        sizes = (dim, *hidden, 1)
        params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            params.append((scale * rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in),
                           0.1 * rng.standard_normal(fan_out)))
        return cls(params)

    def _value(self, xb):
        out, _ = mlp_forward(self.params, xb, self.activation)
        return out[:, 0]

    def _gradient(self, xb):
        _, acts = mlp_forward(self.params, xb, self.activation)
        _, dx = mlp_backward(self.params, acts, np.ones((xb.shape[0], 1)), self.activation, need_params=False)
        return dx

    def state(self):
        meta = {"kind": self.kind, "dim": self.dim, "layers": len(self.params), "activation": self.activation}
        return meta, _params_state(self.params)

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(_params_from_state(arrays, meta["layers"]), meta["activation"])


# --------------------------------------------------------------------------
# Grid-logit: a fixed-template "classifier" on single-channel images
# --------------------------------------------------------------------------

TEMPLATE_FILTERS = {
    "box": np.full((3, 3), 1.0 / 9.0),
    "blob": np.array([[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]]) / 8.0,
    "edge_x": np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 4.0,
    "edge_y": np.array([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]) / 4.0,
}


def conv_operator(height: int, width: int, kernel: np.ndarray) -> np.ndarray:
    """Dense ``(hw, hw)`` matrix of a same-size zero-padded 2-D correlation."""
    kh, kw = kernel.shape
    ch, cw = kh // 2, kw // 2
    n = height * width
    op = np.zeros((n, n))
    for u in range(height):
        for v in range(width):
            row = u * width + v
            for a in range(kh):
                for b in range(kw):
                    uu, vv = u + a - ch, v + b - cw
                    if 0 <= uu < height and 0 <= vv < width:
                        op[row, uu * width + vv] += kernel[a, b]
    return op


def pool_operator(height: int, width: int, pool: int) -> np.ndarray:
    """Average-pooling matrix over non-overlapping ``pool x pool`` cells (ragged edges allowed)."""
    rows = [list(range(s, min(s + pool, height))) for s in range(0, height, pool)]
    cols = [list(range(s, min(s + pool, width))) for s in range(0, width, pool)]
    op = np.zeros((len(rows) * len(cols), height * width))
    q = 0
    for r in rows:
        for c in cols:
            idx = [u * width + v for u in r for v in c]
            op[q, idx] = 1.0 / len(idx)
            q += 1
    return op


class GridLogitScore(ScoreModel):
    """``f(I) = b + sum_k w_k . pool(tanh(F_k I + c_k))`` for template filters ``F_k``.

    Works on flattened single-channel ``height x width`` images.
    """

    kind = "grid-logit"

    def __init__(self, height: int, width: int, weights, offsets=None, bias: float = 0.0,
                 filters=("box", "blob", "edge_x", "edge_y"), pool: int = 4):
        self.height, self.width, self.pool = int(height), int(width), int(pool)
        self.filters = tuple(filters)
        self.dim = self.height * self.width
        ops = [conv_operator(self.height, self.width, TEMPLATE_FILTERS[k]) for k in self.filters]
        self._conv = np.concatenate(ops, axis=0)
        self._pool = pool_operator(self.height, self.width, self.pool)
        n_cells = self._pool.shape[0]
        self.weights = _frozen(weights)
        if self.weights.shape != (len(self.filters), n_cells):
            raise DimMismatch(f"weights must have shape {(len(self.filters), n_cells)}")
        self.offsets = _frozen(np.zeros(len(self.filters)) if offsets is None else offsets)
        self.bias = float(bias)
        # per-pixel weight of each filter response: (n_filters * dim,)
        self._pixel_w = (self.weights @ self._pool).reshape(-1)
        self._pixel_c = np.repeat(self.offsets, self.dim)

    @classmethod
    def template(cls, height: int, width: int, rng: np.random.Generator, pool: int = 4, target=None):
        """Seeded classifier; if ``target`` (a flat image) is given, box weights favour its bright cells."""
        n_cells = pool_operator(height, width, pool).shape[0]
        w = 0.5 * rng.standard_normal((4, n_cells))
        if target is not None:
            cells = pool_operator(height, width, pool) @ np.asarray(target, dtype=np.float64)
            w[0] += 4.0 * (cells - cells.mean()) / (np.abs(cells - cells.mean()).max() + 1e-12)
        offsets = 0.1 * rng.standard_normal(4)
        return cls(height, width, w, offsets, bias=0.0, pool=pool)

    def _responses(self, xb):
        return xb @ self._conv.T + self._pixel_c

    def _value(self, xb):
        return self.bias + np.tanh(self._responses(xb)) @ self._pixel_w

    def _gradient(self, xb):
        a = np.tanh(self._responses(xb))
        return ((1.0 - a * a) * self._pixel_w) @ self._conv

    def image_value(self, image: GridImage) -> float:
        return self.value(image.flat())

    def state(self):
        meta = {"kind": self.kind, "height": self.height, "width": self.width, "pool": self.pool,
                "filters": list(self.filters), "bias": self.bias}
        return meta, {"weights": self.weights, "offsets": self.offsets}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(meta["height"], meta["width"], arrays["weights"], arrays["offsets"], meta["bias"],
                   tuple(meta["filters"]), meta["pool"])


# --------------------------------------------------------------------------
# Velocity fields
# --------------------------------------------------------------------------


def check_time(t) -> float:
    t = float(t)
    if not (-_TIME_EPS <= t <= 1.0 + _TIME_EPS) or math.isnan(t):
        raise TimeOutOfRange(f"t={t} outside [0, 1]")
    return min(max(t, 0.0), 1.0)


class VelocityField:
    kind = "abstract"
    dim: int

    def eval(self, x, t):
        t = check_time(t)
        xb, single = _points(x, self.dim)
        v = self._eval(xb, t)
        return v[0] if single else v

    def _eval(self, xb, t):
        raise NotImplementedError


class ConstantField(VelocityField):
    kind = "constant"

    def __init__(self, c):
        self.c = _frozen(c)
        self.dim = self.c.size

    def _eval(self, xb, t):
        return np.broadcast_to(self.c, xb.shape).copy()

    def state(self):
        return {"kind": self.kind, "dim": self.dim}, {"c": self.c}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["c"])


class AffineField(VelocityField):
    """``v(x, t) = A x + b`` (time-independent)."""

    kind = "affine"

    def __init__(self, matrix, offset=None):
        self.matrix = _frozen(matrix)
        self.dim = self.matrix.shape[0]
        if self.matrix.shape != (self.dim, self.dim):
            raise DimMismatch("affine field matrix must be square")
        self.offset = _frozen(np.zeros(self.dim) if offset is None else offset)

    def _eval(self, xb, t):
        return xb @ self.matrix.T + self.offset

    def state(self):
        return {"kind": self.kind, "dim": self.dim}, {"matrix": self.matrix, "offset": self.offset}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["matrix"], arrays["offset"])


class StraightPairField(ConstantField):
    """Velocity ``z1 - z0`` of the linear interpolation between two endpoints."""

    kind = "straight-pair"

    def __init__(self, z0, z1):
        self.z0, self.z1 = _frozen(z0), _frozen(z1)
        if self.z0.shape != self.z1.shape:
            raise DimMismatch("pair endpoints differ in dimension")
        super().__init__(self.z1 - self.z0)

    def state(self):
        return {"kind": self.kind, "dim": self.dim}, {"z0": self.z0, "z1": self.z1}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["z0"], arrays["z1"])


class MlpField(VelocityField):
    """Learned field ``v_theta(x, t)``."""

    kind = "mlp-flow"

    def __init__(self, spec: MlpSpec, params, init: str = "uniform-fan-in"):
        self.spec = spec
        self.dim = spec.input_dim
        sizes = spec.layer_sizes
        if len(params) != len(sizes) - 1:
            raise DimMismatch("parameter list does not match the layer count")
        for (w, b), a, c in zip(params, sizes[:-1], sizes[1:]):
            if w.shape != (a, c) or b.shape != (c,):
                raise DimMismatch(f"layer shapes {w.shape}/{b.shape} do not match {a}->{c}")
        self.params = [(_frozen(w), _frozen(b)) for w, b in params]
        self.init = init

    @classmethod
    def initialize(cls, spec: MlpSpec, rng: np.random.Generator) -> "MlpField":
        return cls(spec, init_params(spec.layer_sizes, rng))

    def _eval(self, xb, t):
        out, _ = mlp_forward(self.params, self.spec.embed(xb, t), self.spec.activation)
        return out

    def state(self):
        meta = {"kind": self.kind, "dim": self.dim, "spec": self.spec.to_dict(), "init": self.init}
        return meta, _params_state(self.params)

    @classmethod
    def from_state(cls, meta, arrays):
        spec = MlpSpec.from_dict(meta["spec"])
        return cls(spec, _params_from_state(arrays, len(spec.layer_sizes) - 1), meta.get("init", "uniform-fan-in"))


class FunctionField(VelocityField):
    """Wraps a vectorized callable ``fn(xb, t) -> (n, d)``; not serializable."""

    kind = "function"

    def __init__(self, dim: int, fn):
        self.dim = int(dim)
        self._fn = fn

    def _eval(self, xb, t):
        return np.asarray(self._fn(xb, t), dtype=np.float64)


class BoundedTanhField(VelocityField):
    """Smooth perturbation ``u(x, t) = tanh(x W + t c + b) / sqrt(d)`` with ``||u|| <= 1``."""

    kind = "bounded-tanh"

    def __init__(self, w, c, b):
        self.w, self.c, self.b = _frozen(w), _frozen(c), _frozen(b)
        self.dim = self.w.shape[0]

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator, scale: float = 0.5):
        return cls(scale * rng.standard_normal((dim, dim)), rng.standard_normal(dim), rng.standard_normal(dim))

    def _eval(self, xb, t):
        return np.tanh(xb @ self.w + t * self.c + self.b) / math.sqrt(self.dim)

    def state(self):
        return {"kind": self.kind, "dim": self.dim}, {"w": self.w, "c": self.c, "b": self.b}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["w"], arrays["c"], arrays["b"])


class PerturbedField(VelocityField):
    """``base + eps * perturbation``."""

    kind = "perturbed"

    def __init__(self, base: VelocityField, perturbation: VelocityField, eps: float):
        if base.dim != perturbation.dim:
            raise DimMismatch("perturbation dimension differs from the base field")
        self.base, self.perturbation, self.eps = base, perturbation, float(eps)
        self.dim = base.dim

    def _eval(self, xb, t):
        return self.base._eval(xb, t) + self.eps * self.perturbation._eval(xb, t)


MODEL_KINDS: dict[str, type] = {
    cls.kind: cls
    for cls in (AdditiveSinScore, LinearScore, QuadraticScore, CompositeScore, MlpScore, GridLogitScore,
                ConstantField, AffineField, StraightPairField, MlpField, BoundedTanhField)
}


def register_kind(cls):
    MODEL_KINDS[cls.kind] = cls
    return cls


def model_from_state(meta: dict, arrays: dict):
    try:
        cls = MODEL_KINDS[meta["kind"]]
    except KeyError:
        raise ValueError(f"unknown model kind {meta.get('kind')!r}") from None
    return cls.from_state(meta, arrays)
