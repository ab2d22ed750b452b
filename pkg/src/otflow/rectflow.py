"""Rectified Flow training and Reflow coupling regeneration.

The regression target for a coupled pair ``(z0, z1)`` at time ``t`` is the
displacement ``z1 - z0`` at the interpolant ``(1 - t) z0 + t z1``.
Training uses hand-written Adam with cosine learning-rate decay and is
deterministic given the seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol

import numpy as np

from .errors import DimMismatch, EmptyInput, NonFiniteLoss
from .models import MlpField, MlpSpec, mlp_loss_and_grads
from .paths import flow_map
from .tensor import RngStream

log = logging.getLogger(__name__)


class CouplingSampler(Protocol):
    def __call__(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True, eq=False)
class Coupling:
    z0: np.ndarray
    z1: np.ndarray
    kind: str = "deterministic-map"

    def __post_init__(self):
        z0 = np.asarray(self.z0, dtype=np.float64)
        z1 = np.asarray(self.z1, dtype=np.float64)
        if z0.ndim != 2 or z0.shape != z1.shape:
            raise DimMismatch(f"coupling endpoints have shapes {z0.shape} and {z1.shape}")
        if z0.shape[0] == 0:
            raise EmptyInput("coupling has no pairs")
        object.__setattr__(self, "z0", z0)
        object.__setattr__(self, "z1", z1)

    def __len__(self) -> int:
        return self.z0.shape[0]

    @property
    def dim(self) -> int:
        return self.z0.shape[1]

    def transport_cost(self) -> float:
        d = self.z1 - self.z0
        return float(np.mean(np.sum(d * d, axis=1)))

    def sampler(self) -> CouplingSampler:
        """Minibatches drawn with replacement from the stored pairs."""

        def draw(rng, n):
            idx = rng.integers(0, len(self), size=n)
            return self.z0[idx], self.z1[idx]

        return draw


def independent_sampler(sample_p0: Callable, sample_p1: Callable) -> CouplingSampler:
    def draw(rng, n):
        return sample_p0(rng, n), sample_p1(rng, n)

    return draw


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    cosine: bool = True
    lr_floor: float = 0.0
    checkpoint_every: int = 0
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1:
            raise ValueError("steps must be >= 0 and batch >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def lr_at(self, it: int) -> float:
        if not self.cosine or self.steps == 0:
            return self.lr
        frac = 0.5 * (1.0 + math.cos(math.pi * it / self.steps))
        return self.lr_floor + (self.lr - self.lr_floor) * frac

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Checkpoint:
    iteration: int
    field: MlpField
    loss_avg: float


@dataclass
class TrainResult:
    field: MlpField
    checkpoints: list[Checkpoint]
    losses: np.ndarray = field(repr=False)


def rf_loss_batch(vfield: MlpField, z0, z1, t):
    """Mean ``||v((1-t) z0 + t z1, t) - (z1 - z0)||^2`` with parameter gradients."""
    z0 = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    z1 = np.atleast_2d(np.asarray(z1, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if z0.shape != z1.shape or t.shape[0] != z0.shape[0]:
        raise DimMismatch("batch components disagree in size")
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t values must lie in [0, 1]")
    xt = (1.0 - t)[:, None] * z0 + t[:, None] * z1
    return mlp_loss_and_grads(vfield.spec, vfield.params, xt, t, z1 - z0)


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        self.t = 0

    def step(self, params, grads, lr: float):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        out = []
        for i, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
            new = []
            for j, (p, g) in enumerate(((w, gw), (b, gb))):
                m = self.m[i][j]
                v = self.v[i][j]
                m *= c.beta1
                m += (1.0 - c.beta1) * g
                v *= c.beta2
                v += (1.0 - c.beta2) * g * g
                new.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps))
            out.append(tuple(new))
        return out


def train_flow(sampler: CouplingSampler, spec: MlpSpec, cfg: TrainConfig,
               init: MlpField | None = None, progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Fit an MLP field to the Rectified Flow objective.

    Checkpoints are taken at iteration 0 and every ``checkpoint_every``
    iterations; the final field is always the last checkpoint.  ``init``
    warm-starts from an existing field (Reflow rounds).
    """
    rng = RngStream(cfg.seed, cfg.stream).generator()
    init_rng = RngStream(cfg.seed, cfg.stream, (1,)).generator()
    vfield = init if init is not None else MlpField.initialize(spec, init_rng)
    if vfield.spec != spec:
        raise DimMismatch("warm-start field has a different architecture")
    params = [(w.copy(), b.copy()) for w, b in vfield.params]
    opt = Adam(params, cfg)
    losses = np.empty(cfg.steps)
    checkpoints = []
    window = max(1, min(100, cfg.steps))

    def snapshot(it):
        avg = float(losses[max(0, it - window):it].mean()) if it > 0 else float("nan")
        return Checkpoint(it, MlpField(spec, params), avg)

    if cfg.checkpoint_every:
        checkpoints.append(snapshot(0))
    for it in range(cfg.steps):
        z0, z1 = sampler(rng, cfg.batch)
        t = rng.uniform(0.0, 1.0, size=cfg.batch)
        xt = (1.0 - t)[:, None] * z0 + t[:, None] * z1
        loss, grads = mlp_loss_and_grads(spec, params, xt, t, z1 - z0)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became non-finite at iteration {it} (lr={cfg.lr_at(it):g})")
        losses[it] = loss
        params = opt.step(params, grads, cfg.lr_at(it))
        done = it + 1
        if progress is not None:
            progress(done, loss)
        if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done != cfg.steps:
            checkpoints.append(snapshot(done))
    if cfg.steps == 0 and init is not None:
        final = vfield
    else:
        final = MlpField(spec, params)
    avg = float(losses[-window:].mean()) if cfg.steps else float("nan")
    checkpoints.append(Checkpoint(cfg.steps, final, avg))
    return TrainResult(final, checkpoints, losses)


def reflow(vfield, sample_p0: Callable, n: int, K: int = 100, method: str = "rk4",
           rng: np.random.Generator | None = None) -> Coupling:
    """Pairs ``(z0, flow(z0))`` obtained by simulating ``vfield`` from fresh ``p0`` samples."""
    if n < 1:
        raise EmptyInput("reflow needs n >= 1 pairs")
    rng = rng if rng is not None else np.random.default_rng(0)
    z0 = sample_p0(rng, n)
    z1 = flow_map(vfield, z0, K, method)
    return Coupling(z0, z1, kind="reflow-generated")


def rectify(sample_p0: Callable, sample_p1: Callable, spec: MlpSpec, cfg: TrainConfig, rounds: int = 2,
            reflow_pairs: int = 10000, reflow_K: int = 100, method: str = "rk4",
            warm_start: bool = True) -> list[TrainResult]:
    """Train 1-RF on the independent coupling, then ``rounds - 1`` Reflow rounds.

    Round ``r`` uses RNG stream ``cfg.stream + r``; the ``r``-th entry of
    the result is the ``(r+1)``-RF model.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    results = []
    sampler = independent_sampler(sample_p0, sample_p1)
    prev = None
    for r in range(rounds):
        round_cfg = TrainConfig(**{**cfg.to_dict(), "stream": cfg.stream + r})
        if r > 0:
            coupling = reflow(prev.field, sample_p0, reflow_pairs, reflow_K, method,
                              RngStream(cfg.seed, cfg.stream + r, (2,)).generator())
            sampler = coupling.sampler()
            log.info("reflow round %d: coupling cost %.4f", r, coupling.transport_cost())
        res = train_flow(sampler, spec, round_cfg, init=prev.field if (prev is not None and warm_start) else None)
        log.info("%d-RF trained: final loss %.5f", r + 1, res.checkpoints[-1].loss_avg)
        results.append(res)
        prev = res
    return results
