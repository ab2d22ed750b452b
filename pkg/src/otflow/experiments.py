"""Seeded desk-scale experiments producing tabular reports with pass/fail flags.

Each ``exp_*`` function takes an :class:`ExperimentSpec` and returns an
:class:`ExperimentReport`.  Every random draw goes through
``RngStream(seed, stream)`` with fixed stream indices, so a report is
reproducible from its ExperimentSpec alone.  Seeds fan out over a thread pool capped
by ``OTFLOW_THREADS``; results are always reduced in seed order.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .attribution import batch_path_attribution, transport_flow_batch
from .errors import NumericError, TooFewCheckpoints, TooFewSeeds, ValidationError
from .metrics import (
    batch_action,
    batch_curvature,
    batch_gps,
    batch_relative_field_error,
    stability_report,
)
from .models import BoundedTanhField, GridLogitScore, LinearScore, MlpScore, MlpSpec, PerturbedField, QuadraticScore
from .ot import Gaussian, GaussianOTField, gaussian_w2_squared
from .paths import reference_endpoint_states, trace
from .rectflow import TrainConfig, rectify
from .tensor import RngStream, random_spd

log = logging.getLogger(__name__)

EXPERIMENTS = ("additive", "gaussian-ot", "completeness", "convergence", "stability")

# acceptance thresholds; flags are computed from these and nothing else
THRESHOLDS: dict[str, dict[str, float]] = {
    "additive": {"max_abs_error": 5e-3, "K_check": 1000, "error_ratio": 10.0},
    "gaussian-ot": {"identity_rel": 0.01, "oracle_gps_tol": 1e-6, "oracle_delta_A_tol": 1e-6,
                    "rectification_factor": 3.0},
    "completeness": {"decay_ratio": 0.15, "linear_tol": 1e-10},
    "convergence": {"min_checkpoints": 8, "median_pearson": 0.8},
    "stability": {"min_seeds": 3},
}

DEFAULT_PARAMS: dict[str, dict] = {
    "additive": {"seeds": [0], "dim": 10, "K_values": [10, 100, 1000], "n_samples": 100},
    "gaussian-ot": {"seeds": [0, 1, 2, 3, 4], "dim": 10, "K": 50, "mean_shift": 5.0, "cov_range": [0.25, 2.0],
                    "hidden": [64, 64], "steps": 3000, "batch": 256, "lr": 2e-3, "rounds": 3,
                    "reflow_pairs": 10000, "reflow_K": 50, "n_eval": 500, "n_mc": 100000, "n_saved_paths": 16},
    "completeness": {"seeds": [0], "dim": 10, "K_values": [10, 20, 50, 100, 200], "n_samples": 100,
                     "mean_shift": 5.0, "cov_range": [0.25, 2.0], "perturbation": 1.0},
    "convergence": {"seeds": [0], "dim": 10, "K": 50, "mean_shift": 5.0, "cov_range": [0.25, 2.0],
                    "hidden": [64, 64], "steps": 3000, "batch": 256, "lr": 2e-3, "checkpoint_every": 300,
                    "n_inputs": 20},
    "stability": {"seeds": [0, 1, 2], "image_size": 16, "K": 50, "hidden": [128, 128], "steps": 2000,
                  "batch": 256, "lr": 1e-3, "reflow_pairs": 5000, "reflow_K": 50, "n_images": 8,
                  "noise": 0.3, "bump_amplitude": 0.5, "task_seed": 0},
}


@dataclass
class ExperimentSpec:
    experiment: str
    params: dict = dc_field(default_factory=dict)
    thresholds: dict = dc_field(default_factory=dict)
    method: str = "rk4"
    endpoint_mode: str = "reversed-backward"
    out_dir: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        merged = dict(DEFAULT_PARAMS[self.experiment])
        for key, value in self.params.items():
            if key not in merged:
                raise ValidationError(f"experiment {self.experiment!r} has no parameter {key!r}")
            merged[key] = value
        self.params = merged
        self.thresholds = {**THRESHOLDS[self.experiment], **self.thresholds}
        if not self.params["seeds"]:
            raise TooFewSeeds("seed list is empty")

    @property
    def seeds(self) -> list[int]:
        return list(self.params["seeds"])

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "params": self.params, "thresholds": self.thresholds,
                "method": self.method, "endpoint_mode": self.endpoint_mode}


@dataclass
class ExperimentReport:
    experiment: str
    tables: dict[str, tuple[list[str], list[dict]]]
    aggregates: dict
    flags: dict[str, bool]
    provenance: dict
    summary: dict = dc_field(default_factory=dict)
    artifacts: dict[str, np.ndarray] = dc_field(default_factory=dict, repr=False)

    @property
    def rows(self) -> list[dict]:
        return self.tables["raw"][1]

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "aggregates": self.aggregates, "flags": self.flags,
                "passed": self.passed, "summary": self.summary, "provenance": self.provenance}

    def write(self, out_dir) -> list[Path]:
        """``report.json``, ``raw.csv`` (plus any extra tables) and OTF1 artifacts."""
        from .io import save_tensor, write_csv, write_json

        out = Path(out_dir)
        written = []
        for name, (columns, rows) in self.tables.items():
            written.append(write_csv(out / f"{name}.csv", rows, columns))
        for name, arr in self.artifacts.items():
            written.append(save_tensor(out / f"{name}.otf", arr))
        written.append(write_json(out / "report.json", _json_safe(self.to_dict())))
        return written


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def aggregate(rows: list[dict], group: str, metrics: list[str]) -> dict:
    """Mean and sample standard deviation (``ddof=1``) of each metric within each group."""
    out: dict = {}
    for row in rows:
        out.setdefault(str(row[group]), [])
        out[str(row[group])].append(row)
    result = {}
    for key, members in out.items():
        result[key] = {}
        for m in metrics:
            vals = np.array([r[m] for r in members if r.get(m) is not None], dtype=float)
            vals = vals[np.isfinite(vals)]
            result[key][m] = {
                "mean": float(vals.mean()) if vals.size else None,
                "std": float(vals.std(ddof=1)) if vals.size > 1 else None,
                "n": int(vals.size),
            }
    return result


def worker_count() -> int:
    env = os.environ.get("OTFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"OTFLOW_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def parallel_map(fn: Callable, items: list) -> list:
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _provenance(spec: ExperimentSpec) -> dict:
    return {"code_version": __version__, "seeds": spec.seeds, "config": spec.to_dict()}


# --------------------------------------------------------------------------
# Task builders
# --------------------------------------------------------------------------


def gaussian_task(seed: int, dim: int, mean_shift: float = 5.0, cov_range=(0.25, 2.0)) -> tuple[Gaussian, Gaussian]:
    """``p0 = N(0, I)`` and ``p1 = N(m, S)`` with ``||m|| = mean_shift`` and seeded SPD ``S``."""
    rng = RngStream(seed, 0).generator()
    m = rng.standard_normal(dim)
    m *= mean_shift / np.linalg.norm(m)
    return Gaussian.standard(dim), Gaussian(m, random_spd(rng, dim, *cov_range))


def _samplers(g0: Gaussian, g1: Gaussian):
    return (lambda r, n: g0.sample(r, n)), (lambda r, n: g1.sample(r, n))


@dataclass(frozen=True, eq=False)
class BumpImageTask:
    """Single-channel ``size x size`` images: a central bump plus random bumps on a coarse grid plus noise."""

    size: int
    mean_image: np.ndarray
    basis: np.ndarray
    amplitude: float
    noise: float

    @classmethod
    def build(cls, size: int = 16, amplitude: float = 0.5, noise: float = 0.3) -> "BumpImageTask":
        u, v = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        step = max(1, size // 4)
        centers = [(step // 2 + step * i, step // 2 + step * j) for i in range(4) for j in range(4)]
        basis = np.stack([np.exp(-((u - a) ** 2 + (v - b) ** 2) / (2 * 1.5**2)).ravel() for a, b in centers], 1)
        c = (size - 1) / 2.0
        mean = np.exp(-((u - c) ** 2 + (v - c) ** 2) / (2 * 3.0**2)).ravel()
        return cls(size, mean, basis, amplitude, noise)

    @property
    def dim(self) -> int:
        return self.size * self.size

    def sample_p0(self, rng, n):
        return rng.standard_normal((n, self.dim))

    def sample_p1(self, rng, n):
        coeffs = rng.standard_normal((n, self.basis.shape[1]))
        return self.mean_image + self.amplitude * coeffs @ self.basis.T + self.noise * rng.standard_normal((n, self.dim))


# --------------------------------------------------------------------------
# Additive sanity check
# --------------------------------------------------------------------------


def exp_additive(spec: ExperimentSpec) -> ExperimentReport:
    """Straight-path attribution of ``sum_i sin(x_i)`` from a zero baseline against ``sin(x_i)``."""
    from .models import AdditiveSinScore

    p = spec.params
    d = p["dim"]
    score = AdditiveSinScore(d)
    rows = []
    artifacts = {}
    for seed in spec.seeds:
        x = RngStream(seed, 0).generator().uniform(-np.pi, np.pi, size=(p["n_samples"], d))
        exact = np.sin(x)
        for K in p["K_values"]:
            s = np.arange(K + 1)[:, None, None] / K
            attr = batch_path_attribution(score, s * x[None])
            err = np.abs(attr - exact)
            rows.append({"seed": seed, "K": K, "max_abs_error": float(err.max()), "mean_abs_error": float(err.mean()),
                         "max_residual": float(np.max(np.abs(attr.sum(1) - score.value(x))))})
            if seed == spec.seeds[0]:
                artifacts[f"attr_K{K}"] = attr
    zero = batch_path_attribution(score, np.zeros((2, 1, d)))
    th = spec.thresholds
    by_k = {}
    for r in rows:
        by_k.setdefault(r["K"], []).append(r["max_abs_error"])
    worst = {K: max(v) for K, v in by_k.items()}
    flags = {"zero_input_zero_attribution": bool(np.all(zero == 0.0))}
    kc = int(th["K_check"])
    if kc in worst:
        flags["max_abs_error_below_threshold"] = worst[kc] < th["max_abs_error"]
        kmin = min(worst)
        if kmin != kc:
            flags["error_ratio_above_threshold"] = worst[kmin] / worst[kc] > th["error_ratio"]
    cols = ["seed", "K", "max_abs_error", "mean_abs_error", "max_residual"]
    return ExperimentReport("additive", {"raw": (cols, rows)},
                            aggregate(rows, "K", ["max_abs_error", "mean_abs_error"]), flags, _provenance(spec),
                            {"worst_max_abs_error": {str(k): v for k, v in worst.items()}}, artifacts)


# --------------------------------------------------------------------------
# Controlled Gaussian transport
# --------------------------------------------------------------------------


def oracle_identity(g0: Gaussian, g1: Gaussian, n: int, rng: np.random.Generator, K: int = 20,
                    chunk: int = 10000) -> dict:
    """Monte Carlo action of oracle characteristics started at ``p0`` samples versus the closed-form W2^2."""
    orc = GaussianOTField(g0, g1)
    actions, gps_vals = [], []
    for start in range(0, n, chunk):
        states = trace(orc, g0.sample(rng, min(chunk, n - start)), K, "rk4")
        actions.append(batch_action(states))
        gps_vals.append(batch_gps(states))
    actions = np.concatenate(actions)
    gps_vals = np.concatenate(gps_vals)
    w2 = gaussian_w2_squared(g0, g1)
    mc = float(actions.mean())
    return {"w2_squared": w2, "mc_action": mc, "relative_error": abs(mc - w2) / w2,
            "max_gps_deviation": float(np.nanmax(np.abs(gps_vals - 1.0)))}


def _gaussian_seed(spec: ExperimentSpec, seed: int) -> dict:
    p = spec.params
    g0, g1 = gaussian_task(seed, p["dim"], p["mean_shift"], p["cov_range"])
    orc = GaussianOTField(g0, g1)
    w2 = gaussian_w2_squared(g0, g1)
    x1 = g1.sample(RngStream(seed, 9).generator(), p["n_eval"])
    K = p["K"]
    so = reference_endpoint_states(orc, x1, K, spec.method, spec.endpoint_mode)
    a_star = float(batch_action(so).mean())

    def row(method, states, vfield, status="ok"):
        if states is None:
            return {"seed": seed, "method": method, "status": status, "w2_squared": w2,
                    "oracle_action": a_star}
        action = float(batch_action(states).mean())
        return {"seed": seed, "method": method, "status": status, "w2_squared": w2, "oracle_action": a_star,
                "action": action, "delta_A": (action - a_star) / (a_star + 1e-12),
                "rfe": float(batch_relative_field_error(states, vfield, orc).mean()),
                "curv": float(batch_curvature(states).mean()), "gps": float(np.nanmean(batch_gps(states)))}

    rows = [row("oracle", so, orc)]
    saved = {"oracle": so[:, : p["n_saved_paths"]]}
    p0, p1 = _samplers(g0, g1)
    cfg = TrainConfig(steps=p["steps"], batch=p["batch"], lr=p["lr"], seed=seed, stream=1)
    try:
        results = rectify(p0, p1, MlpSpec(p["dim"], tuple(p["hidden"])), cfg, rounds=p["rounds"],
                          reflow_pairs=p["reflow_pairs"], reflow_K=p["reflow_K"], method=spec.method)
    except NumericError as exc:
        log.warning("seed %d: training failed: %s", seed, exc)
        return {"rows": rows + [row(f"{r + 1}-RF", None, None, f"failed: {exc}") for r in range(p["rounds"])],
                "saved": saved}
    for r, res in enumerate(results):
        name = f"{r + 1}-RF"
        try:
            states = reference_endpoint_states(res.field, x1, K, spec.method, spec.endpoint_mode)
        except NumericError as exc:
            rows.append(row(name, None, None, f"failed: {exc}"))
            continue
        rows.append(row(name, states, res.field))
        saved[name] = states[:, : p["n_saved_paths"]]
    return {"rows": rows, "saved": saved}


def exp_gaussian_ot(spec: ExperimentSpec) -> ExperimentReport:
    """Oracle versus 1/2/3-RF on the seeded Gaussian pair: W2^2, excess action, field error, curvature."""
    p = spec.params
    outs = parallel_map(lambda s: _gaussian_seed(spec, s), spec.seeds)
    rows = [r for o in outs for r in o["rows"]]
    metrics = ["w2_squared", "action", "delta_A", "rfe", "curv", "gps"]
    agg = aggregate(rows, "method", metrics)
    th = spec.thresholds
    s0 = spec.seeds[0]
    g0, g1 = gaussian_task(s0, p["dim"], p["mean_shift"], p["cov_range"])
    ident = oracle_identity(g0, g1, p["n_mc"], RngStream(s0, 8).generator())
    oracle_rows = [r for r in rows if r["method"] == "oracle"]
    flags = {
        "oracle_action_matches_w2": ident["relative_error"] < th["identity_rel"],
        "oracle_gps_is_one": ident["max_gps_deviation"] < th["oracle_gps_tol"],
        "oracle_delta_A_zero": all(abs(r["delta_A"]) < th["oracle_delta_A_tol"] for r in oracle_rows),
        "oracle_rfe_zero": all(r["rfe"] == 0.0 for r in oracle_rows),
    }

    def mean(method, metric):
        return (agg.get(method, {}).get(metric) or {}).get("mean")

    if "1-RF" in agg:
        c1 = mean("1-RF", "curv")
        flags["oracle_curv_below_1rf"] = c1 is not None and mean("oracle", "curv") < c1
    if "1-RF" in agg and "2-RF" in agg:
        f = th["rectification_factor"]
        for metric in ("delta_A", "rfe"):
            m1, m2 = mean("1-RF", metric), mean("2-RF", metric)
            flags[f"{metric}_2rf_below_1rf"] = m1 is not None and m2 is not None and m2 < m1
            flags[f"{metric}_2rf_factor_{f:g}"] = (m1 is not None and m2 is not None
                                                    and f * abs(m2) < abs(m1))
    artifacts = {f"paths_{k}": v for k, v in outs[0]["saved"].items()}
    cols = ["seed", "method", "status", "w2_squared", "oracle_action", "action", "delta_A", "rfe", "curv", "gps"]
    return ExperimentReport("gaussian-ot", {"raw": (cols, rows)}, agg, flags, _provenance(spec),
                            {"oracle_identity": ident}, artifacts)


# --------------------------------------------------------------------------
# Completeness residual versus step count
# --------------------------------------------------------------------------


def exp_completeness(spec: ExperimentSpec) -> ExperimentReport:
    """Completeness residual of transport-flow attributions at each ``K``, with linear and quadratic controls.

    The flow is the Gaussian oracle plus a smooth bounded perturbation, so
    paths are curved and the score (a random tanh MLP) is non-linear.
    """
    p = spec.params
    d = p["dim"]
    rows = []
    for seed in spec.seeds:
        g0, g1 = gaussian_task(seed, d, p["mean_shift"], p["cov_range"])
        rng = RngStream(seed, 3).generator()
        vfield = PerturbedField(GaussianOTField(g0, g1), BoundedTanhField.random(d, rng), p["perturbation"])
        score = MlpScore.random(d, (32,), rng)
        linear = LinearScore(rng.standard_normal(d), float(rng.standard_normal()))
        h = rng.standard_normal((d, d))
        quad = QuadraticScore(0.5 * (h + h.T) / math.sqrt(d), rng.standard_normal(d))
        M = quad.hessian_bound()
        x1 = g1.sample(RngStream(seed, 9).generator(), p["n_samples"])
        for K in p["K_values"]:
            attr, states = transport_flow_batch(score, vfield, x1, K, spec.method, spec.endpoint_mode)
            df = score.value(states[-1]) - score.value(states[0])
            res = np.abs(attr.sum(1) - df)
            lin = batch_path_attribution(linear, states)
            lin_res = np.abs(lin.sum(1) - (linear.value(states[-1]) - linear.value(states[0])))
            qa = batch_path_attribution(quad, states)
            q_res = np.abs(qa.sum(1) - (quad.value(states[-1]) - quad.value(states[0])))
            V = K * np.linalg.norm(np.diff(states, axis=0), axis=2).max(axis=0)
            bound = M * V**2 / (2 * K)
            n = res.size
            rows.append({"seed": seed, "K": K, "R_eff": float(res.mean()),
                         "std": float(res.std(ddof=1)) if n > 1 else float("nan"),
                         "sem": float(res.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan"),
                         "rel_error": float(np.mean(res / (np.abs(df) + 1e-12))),
                         "linear_R_eff": float(lin_res.mean()),
                         "quad_R_eff": float(q_res.mean()), "quad_bound_ratio": float(np.max(q_res / bound))})
    th = spec.thresholds
    flags = {"strictly_decreasing": True, "decay_ratio": True, "linear_control_zero": True,
             "quadratic_bound_holds": True}
    for seed in spec.seeds:
        r = sorted((x for x in rows if x["seed"] == seed), key=lambda x: x["K"])
        reff = [x["R_eff"] for x in r]
        flags["strictly_decreasing"] &= all(b < a for a, b in zip(reff, reff[1:]))
        flags["decay_ratio"] &= reff[-1] / reff[0] < th["decay_ratio"]
        flags["linear_control_zero"] &= all(x["linear_R_eff"] <= th["linear_tol"] for x in r)
        flags["quadratic_bound_holds"] &= all(x["quad_bound_ratio"] <= 1.0 for x in r)
    cols = ["seed", "K", "R_eff", "std", "sem", "rel_error", "linear_R_eff", "quad_R_eff", "quad_bound_ratio"]
    return ExperimentReport("completeness", {"raw": (cols, rows)},
                            aggregate(rows, "K", ["R_eff", "rel_error", "linear_R_eff"]), flags, _provenance(spec))


# --------------------------------------------------------------------------
# Attribution error tracking field error over training
# --------------------------------------------------------------------------


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a, b = a - a.mean(), b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b / den) if den > 0 else float("nan")


def exp_convergence(spec: ExperimentSpec) -> ExperimentReport:
    """Per-checkpoint RFE and RAE against the final checkpoint of a 1-RF training run."""
    p = spec.params
    d = p["dim"]
    rows, corr_rows = [], []
    artifacts = {}
    for seed in spec.seeds:
        g0, g1 = gaussian_task(seed, d, p["mean_shift"], p["cov_range"])
        p0, p1 = _samplers(g0, g1)
        cfg = TrainConfig(steps=p["steps"], batch=p["batch"], lr=p["lr"], seed=seed, stream=1,
                          checkpoint_every=p["checkpoint_every"])
        res = rectify(p0, p1, MlpSpec(d, tuple(p["hidden"])), cfg, rounds=1)[0]
        ckpts = res.checkpoints
        need = int(spec.thresholds["min_checkpoints"])
        if len(ckpts) < need:
            raise TooFewCheckpoints(f"{len(ckpts)} checkpoints; need at least {need}")
        score = MlpScore.random(d, (32,), RngStream(seed, 5).generator())
        x1 = g1.sample(RngStream(seed, 7).generator(), p["n_inputs"])
        ref = ckpts[-1].field
        p_ref, _ = transport_flow_batch(score, ref, x1, p["K"], spec.method, spec.endpoint_mode)
        rae = np.empty((len(ckpts), len(x1)))
        rfe = np.empty_like(rae)
        for i, ck in enumerate(ckpts):
            attr, states = transport_flow_batch(score, ck.field, x1, p["K"], spec.method, spec.endpoint_mode)
            rae[i] = np.linalg.norm(attr - p_ref, axis=1) / (np.linalg.norm(p_ref, axis=1) + 1e-12)
            rfe[i] = batch_relative_field_error(states, ck.field, ref)
            rows.append({"seed": seed, "iteration": ck.iteration, "loss_avg": ck.loss_avg,
                         "rfe_mean": float(rfe[i].mean()), "rae_mean": float(rae[i].mean())})
        for j in range(len(x1)):
            corr_rows.append({"seed": seed, "input": j, "pearson": _pearson(rae[:, j], rfe[:, j])})
        if seed == spec.seeds[0]:
            artifacts["rae"], artifacts["rfe"] = rae, rfe
    th = spec.thresholds
    medians = {}
    for seed in spec.seeds:
        vals = np.array([r["pearson"] for r in corr_rows if r["seed"] == seed])
        medians[str(seed)] = float(np.nanmedian(vals))
    flags = {"median_pearson_above_threshold": all(m > th["median_pearson"] for m in medians.values()),
             "reference_point_zero": True, "rae_decreases": True}
    for seed in spec.seeds:
        r = [x for x in rows if x["seed"] == seed]
        flags["reference_point_zero"] &= r[-1]["rae_mean"] == 0.0 and r[-1]["rfe_mean"] == 0.0
        flags["rae_decreases"] &= r[0]["rae_mean"] > r[-2]["rae_mean"]
    cols = ["seed", "iteration", "loss_avg", "rfe_mean", "rae_mean"]
    return ExperimentReport("convergence",
                            {"raw": (cols, rows), "correlations": (["seed", "input", "pearson"], corr_rows)},
                            aggregate(corr_rows, "seed", ["pearson"]), flags, _provenance(spec),
                            {"median_pearson": medians}, artifacts)


# --------------------------------------------------------------------------
# Seed stability on bump images
# --------------------------------------------------------------------------


def exp_stability(spec: ExperimentSpec) -> ExperimentReport:
    """Across-seed agreement of 1-RF and 2-RF transport-flow attribution maps on bump images."""
    p = spec.params
    seeds = spec.seeds
    if len(seeds) < spec.thresholds["min_seeds"]:
        raise TooFewSeeds(f"stability needs at least {spec.thresholds['min_seeds']:g} seeds, got {len(seeds)}")
    size = p["image_size"]
    task = BumpImageTask.build(size, p["bump_amplitude"], p["noise"])
    task_rng = RngStream(p["task_seed"], 0)
    score = GridLogitScore.template(size, size, task_rng.child(1).generator(), target=task.mean_image)
    x1 = task.sample_p1(task_rng.child(2).generator(), p["n_images"])
    spec_mlp = MlpSpec(task.dim, tuple(p["hidden"]))

    def run(seed):
        cfg = TrainConfig(steps=p["steps"], batch=p["batch"], lr=p["lr"], seed=seed, stream=1)
        results = rectify(task.sample_p0, task.sample_p1, spec_mlp, cfg, rounds=2,
                          reflow_pairs=p["reflow_pairs"], reflow_K=p["reflow_K"], method=spec.method)
        out = {}
        for r, res in enumerate(results):
            attr, states = transport_flow_batch(score, res.field, x1, p["K"], spec.method, spec.endpoint_mode)
            out[f"{r + 1}-RF"] = (attr, float(batch_action(states).mean()), res.checkpoints[-1].loss_avg)
        return out

    outs = parallel_map(run, seeds)
    methods = ["1-RF", "2-RF"]
    seed_rows, stab_rows = [], []
    for seed, o in zip(seeds, outs):
        for m in methods:
            seed_rows.append({"seed": seed, "method": m, "action": o[m][1], "final_loss": o[m][2]})
    artifacts = {}
    for m in methods:
        maps = np.stack([o[m][0] for o in outs]).reshape(len(seeds), -1, size, size)
        artifacts[f"maps_{m}"] = maps
        for j in range(maps.shape[1]):
            rep = stability_report(list(maps[:, j]))
            stab_rows.append({"method": m, "image": j, **rep.as_dict()})
    agg = {**{f"action/{k}": v for k, v in aggregate(seed_rows, "method", ["action"]).items()},
           **aggregate(stab_rows, "method", ["pixel_variance", "mean_ssim", "mean_rank_corr"])}
    flags = {
        "rank_corr_2rf_above_1rf": agg["2-RF"]["mean_rank_corr"]["mean"] > agg["1-RF"]["mean_rank_corr"]["mean"],
        "pixel_variance_2rf_below_1rf": agg["2-RF"]["pixel_variance"]["mean"] < agg["1-RF"]["pixel_variance"]["mean"],
    }
    return ExperimentReport("stability",
                            {"raw": (["seed", "method", "action", "final_loss"], seed_rows),
                             "stability": (["method", "image", "pixel_variance", "mean_ssim", "mean_rank_corr"],
                                           stab_rows)},
                            agg, flags, _provenance(spec), {}, artifacts)


RUNNERS: dict[str, Callable[[ExperimentSpec], ExperimentReport]] = {
    "additive": exp_additive,
    "gaussian-ot": exp_gaussian_ot,
    "completeness": exp_completeness,
    "convergence": exp_convergence,
    "stability": exp_stability,
}


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    report = RUNNERS[spec.experiment](spec)
    if spec.out_dir:
        report.write(spec.out_dir)
    return report
