"""Persistence: OTF1 tensor files, model/checkpoint directories, JSON and CSV reports.

Every write goes to a temporary file in the target directory, is fsynced,
and is then renamed into place.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError
from .models import model_from_state
from .tensor import decode_otf1, encode_otf1

CSV_SIG_DIGITS = 6


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc


def sha256_file(path) -> str:
    return hashlib.sha256(_read_bytes(path)).hexdigest()


# --- tensors ---------------------------------------------------------------


def save_tensor(path, array) -> Path:
    return atomic_write_bytes(path, encode_otf1(array))


def load_tensor(path) -> np.ndarray:
    try:
        return decode_otf1(_read_bytes(path))
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


# --- JSON ------------------------------------------------------------------


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_bytes(path, dumps_json(obj).encode())


def read_json(path):
    text = _read_bytes(path).decode()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


# --- CSV -------------------------------------------------------------------


def format_number(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if x != x:
            return "nan"
        return f"{x:.{CSV_SIG_DIGITS}g}"
    return "" if x is None else str(x)


def render_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_number(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, rows: list[dict], columns: list[str]) -> Path:
    return atomic_write_bytes(path, render_csv(rows, columns).encode())


def read_csv(path) -> list[dict]:
    text = _read_bytes(path).decode()
    return list(csv.DictReader(io.StringIO(text)))


# --- models and checkpoints ------------------------------------------------


def save_model(directory, model, extra: dict | None = None) -> Path:
    """Write ``model.json`` (kind + spec + blob names) and one OTF1 file per array."""
    directory = Path(directory)
    meta, arrays = model.state()
    blobs = {}
    for name, arr in arrays.items():
        fname = f"{name}.otf"
        save_tensor(directory / fname, arr)
        blobs[name] = {"file": fname, "sha256": sha256_file(directory / fname)}
    header = {"format": "otflow-model/1", "model": meta, "blobs": blobs}
    if extra:
        header.update(extra)
    write_json(directory / "model.json", header)
    return directory


def load_model(directory):
    directory = Path(directory)
    if not (directory / "model.json").exists():
        raise IoError(f"no model found at {directory} (missing model.json)")
    header = read_json(directory / "model.json")
    if header.get("format") != "otflow-model/1":
        raise FormatError(f"{directory}: unsupported model format {header.get('format')!r}")
    arrays = {}
    for name, blob in header["blobs"].items():
        path = directory / blob["file"]
        if sha256_file(path) != blob["sha256"]:
            raise FormatError(f"{path}: digest mismatch")
        arrays[name] = load_tensor(path)
    return model_from_state(header["model"], arrays)


def save_checkpoint(run_dir, checkpoint, extra: dict | None = None) -> Path:
    """``<run_dir>/ckpt_<iter>/`` holding the field plus iteration and running loss."""
    info = {"iteration": checkpoint.iteration, "loss_avg": checkpoint.loss_avg}
    if extra:
        info.update(extra)
    path = Path(run_dir) / f"ckpt_{checkpoint.iteration}"
    save_model(path, checkpoint.field, {"checkpoint": info})
    return path


def load_checkpoint(path):
    from .rectflow import Checkpoint

    path = Path(path)
    header = read_json(path / "model.json") if (path / "model.json").exists() else None
    if header is None or "checkpoint" not in header:
        raise IoError(f"no checkpoint found at {path}")
    info = header["checkpoint"]
    return Checkpoint(info["iteration"], load_model(path), info["loss_avg"])


def save_trajectory(path, traj) -> Path:
    """OTF1 ``(K+1, d)`` states plus a ``.json`` sidecar next to it."""
    path = Path(path)
    save_tensor(path, traj.states)
    write_json(path.with_suffix(".json"), traj.sidecar())
    return path


def load_trajectory(path):
    from .paths import Trajectory

    path = Path(path)
    states = load_tensor(path)
    side = path.with_suffix(".json")
    meta = read_json(side) if side.exists() else {}
    if meta.get("K") is not None and meta["K"] != states.shape[0] - 1:
        raise FormatError(f"{side}: K={meta['K']} does not match {states.shape[0] - 1} steps")
    return Trajectory(states, meta.get("method") or "given", meta.get("mode"), meta.get("field_id"))


def save_attribution(path, attr, run_id: str | None = None) -> Path:
    path = Path(path)
    save_tensor(path, attr.values)
    meta = attr.metadata()
    meta.update({"run_id": run_id, "start": attr.start.tolist(), "end": attr.end.tolist()})
    write_json(path.with_suffix(".json"), meta)
    return path


def load_attribution(path):
    from .attribution import AttributionVector

    path = Path(path)
    values = load_tensor(path)
    meta = read_json(path.with_suffix(".json"))
    return AttributionVector(values, np.array(meta["start"]), np.array(meta["end"]), meta["score_start"],
                             meta["score_end"], meta["K"], meta["method"], meta.get("quadrature", "left"))


def save_gaussian(directory, g) -> Path:
    directory = Path(directory)
    save_tensor(directory / "cov.otf", g.cov)
    write_json(directory / "gaussian.json", {"mean": g.mean.tolist(), "cov": "cov.otf"})
    return directory


def load_gaussian(directory):
    from .ot import Gaussian

    directory = Path(directory)
    meta = read_json(directory / "gaussian.json")
    return Gaussian(np.array(meta["mean"]), load_tensor(directory / meta["cov"]))


# --- run manifests ---------------------------------------------------------


def make_run_id(config: dict, seed: int, clock: float | None = None) -> str:
    import time

    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime(time.time() if clock is None else clock))
    digest = hashlib.sha256((dumps_json(config) + str(seed)).encode()).hexdigest()[:8]
    return f"{stamp}-{digest}"


class RunManifest:
    """Resolved config plus sha256 digests of every input and output artifact of one CLI run.

    It is written once before any numeric output, and rewritten with the
    output digests when the run finishes.
    """

    FILENAME = "manifest.json"

    def __init__(self, run_id: str, command: str, config: dict, seed: int, tool_version: str,
                 inputs: dict | None = None, outputs: dict | None = None, status: str = "running"):
        self.run_id = run_id
        self.command = command
        self.config = config
        self.seed = seed
        self.tool_version = tool_version
        self.inputs = dict(inputs or {})
        self.outputs = dict(outputs or {})
        self.status = status

    def add_input(self, path) -> None:
        path = Path(path)
        files = [path / "model.json"] if path.is_dir() else [path]
        if path.is_dir():
            files += sorted(p for p in path.iterdir() if p.suffix == ".otf")
        for f in files:
            self.inputs[str(f)] = sha256_file(f)

    def record_outputs(self, out_dir) -> None:
        out_dir = Path(out_dir)
        self.outputs = {
            str(p.relative_to(out_dir)): sha256_file(p)
            for p in sorted(out_dir.rglob("*"))
            if p.is_file() and p.name != self.FILENAME and not p.name.startswith(".")
        }

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "command": self.command, "tool_version": self.tool_version,
                "seed": self.seed, "status": self.status, "config": self.config, "inputs": self.inputs,
                "outputs": self.outputs}

    def write(self, out_dir) -> Path:
        return write_json(Path(out_dir) / self.FILENAME, self.to_dict())

    @classmethod
    def read(cls, out_dir) -> "RunManifest":
        d = read_json(Path(out_dir) / cls.FILENAME)
        return cls(d["run_id"], d["command"], d["config"], d["seed"], d["tool_version"], d["inputs"],
                   d["outputs"], d["status"])

    def verify(self, out_dir) -> list[str]:
        """Relative paths whose current digest differs from the recorded one."""
        out_dir = Path(out_dir)
        bad = []
        for rel, digest in self.outputs.items():
            p = out_dir / rel
            if not p.is_file() or sha256_file(p) != digest:
                bad.append(rel)
        return bad
