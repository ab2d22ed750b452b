"""JSON run configuration: defaults, validation, and round-tripping.

A configuration is a two-level mapping ``section -> key -> value``.  Any
key not listed in :data:`DEFAULTS` is rejected, so typos fail loudly
instead of silently falling back to a default.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import IoError, ParseError, RangeError, UnknownKey

DEFAULTS: dict[str, dict] = {
    "attribution": {"K": 50, "method": "rk4", "endpoint_mode": "reversed-backward", "quadrature": "left"},
    "metrics": {"alpha": 10.0, "deletion_steps": 20, "replacement": "zero", "blur_sigma": 2.0},
    "model": {"hidden": [64, 64], "activation": "tanh", "time_embedding": "append", "fourier_features": 0},
    "train": {"steps": 2000, "batch": 256, "lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8,
              "cosine": True, "checkpoint_every": 0},
    "reflow": {"rounds": 2, "pairs": 10000, "K": 100, "warm_start": True},
    # null means "use the experiment's own calibrated default"
    "experiment": {"seeds": None, "dim": None, "K": None, "K_values": None, "n_samples": None, "n_eval": None,
                   "n_inputs": None, "n_images": None, "steps": None, "lr": None, "hidden": None, "rounds": None,
                   "reflow_pairs": None, "checkpoint_every": None},
}


def _int(lo=None):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, int):
            return "must be an integer"
        if lo is not None and v < lo:
            return f"must be >= {lo}, got {v}"
    return check


def _num(lo=None, hi=None, strict_lo=False):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return "must be a number"
        if lo is not None and (v <= lo if strict_lo else v < lo):
            return f"must be {'>' if strict_lo else '>='} {lo}, got {v}"
        if hi is not None and v > hi:
            return f"must be <= {hi}, got {v}"
    return check


def _choice(*options):
    def check(v):
        if v not in options:
            return f"must be one of {list(options)}, got {v!r}"
    return check


def _bool(v):
    if not isinstance(v, bool):
        return "must be true or false"


def _int_list(lo, nonempty=True):
    item = _int(lo)

    def check(v):
        if not isinstance(v, list) or (nonempty and not v):
            return "must be a non-empty list of integers"
        for x in v:
            msg = item(x)
            if msg:
                return f"entries {msg}"
    return check


def _nullable(rule):
    def check(v):
        return None if v is None else rule(v)
    return check


RULES = {
    "attribution": {"K": _int(1), "method": _choice("euler", "rk4"),
                    "endpoint_mode": _choice("reversed-backward", "forward-corrected"),
                    "quadrature": _choice("left", "midpoint")},
    "metrics": {"alpha": _num(0), "deletion_steps": _int(1), "replacement": _choice("zero", "blur"),
                "blur_sigma": _num(0, strict_lo=True)},
    "model": {"hidden": _int_list(1), "activation": _choice("tanh"),
              "time_embedding": _choice("append", "fourier"), "fourier_features": _int(0)},
    "train": {"steps": _int(0), "batch": _int(1), "lr": _num(0, strict_lo=True), "beta1": _num(0, 1),
              "beta2": _num(0, 1), "adam_eps": _num(0, strict_lo=True), "cosine": _bool,
              "checkpoint_every": _int(0)},
    "reflow": {"rounds": _int(1), "pairs": _int(1), "K": _int(1), "warm_start": _bool},
    "experiment": {k: _nullable(r) for k, r in {
        "seeds": _int_list(0), "dim": _int(1), "K": _int(1), "K_values": _int_list(1), "n_samples": _int(1),
        "n_eval": _int(1), "n_inputs": _int(1), "n_images": _int(1), "steps": _int(0),
        "lr": _num(0, strict_lo=True), "hidden": _int_list(1), "rounds": _int(1), "reflow_pairs": _int(1),
        "checkpoint_every": _int(1)}.items()},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def resolve_config(raw: dict) -> dict:
    """Overlay ``raw`` on the defaults, rejecting unknown keys and out-of-range values."""
    if not isinstance(raw, dict):
        raise ParseError("configuration must be a JSON object")
    cfg = default_config()
    for section, body in raw.items():
        if section not in DEFAULTS:
            raise UnknownKey(section)
        if not isinstance(body, dict):
            raise ParseError("section must be an object", field=section)
        for key, value in body.items():
            name = f"{section}.{key}"
            if key not in DEFAULTS[section]:
                raise UnknownKey(name)
            msg = RULES[section][key](value)
            if msg:
                raise RangeError(name, msg)
            cfg[section][key] = copy.deepcopy(value)
    return cfg


def loads_config(text: str) -> dict:
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    return resolve_config(raw)


def parse_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return loads_config(text)


def dumps_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def train_config(cfg: dict, seed: int = 0, stream: int = 0):
    from .rectflow import TrainConfig

    return TrainConfig(**cfg["train"], seed=seed, stream=stream)


def experiment_overrides(cfg: dict, defaults: dict) -> dict:
    """Non-null ``experiment`` entries that the given experiment actually has."""
    return {k: v for k, v in cfg["experiment"].items() if v is not None and k in defaults}


def mlp_spec(cfg: dict, dim: int):
    from .models import MlpSpec

    m = cfg["model"]
    return MlpSpec(dim, tuple(m["hidden"]), m["activation"], m["time_embedding"], m["fourier_features"])
