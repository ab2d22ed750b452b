"""Command-line entry point: ``otflow <subcommand> [--config PATH] [--out DIR] [--seed N] [--quiet]``.

Exit status is 0 on success, 1 on invalid input (bad arguments, config,
files or shapes) and 2 when a numerical routine fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import default_config, experiment_overrides, mlp_spec, parse_config, train_config
from .errors import DimMismatch, NumericError, OtflowError, ValidationError
from .io import (
    RunManifest,
    load_model,
    load_tensor,
    make_run_id,
    save_attribution,
    save_checkpoint,
    save_model,
    save_tensor,
    write_csv,
    write_json,
)

log = logging.getLogger("otflow")

EXPERIMENT_COMMANDS = {
    "exp-additive": "additive",
    "exp-gaussian": "gaussian-ot",
    "exp-completeness": "completeness",
    "exp-convergence": "convergence",
    "exp-stability": "stability",
}


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS lets the flags appear before or after the subcommand without clobbering each other
    g = parser.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="JSON configuration file")
    g.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS,
                   help="output directory (default: runs/<run_id>)")
    g.add_argument("--seed", metavar="N", type=int, default=argparse.SUPPRESS, help="master seed")
    g.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="only print errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"otflow {__version__}")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        _global_flags(p)
        return p

    p = add("train", "fit a Rectified Flow velocity field")
    p.add_argument("--source", metavar="OTF", help="(n, d) samples of the reference distribution")
    p.add_argument("--target", metavar="OTF", help="(n, d) samples of the data distribution")
    p.add_argument("--gaussian-task", action="store_true",
                   help="use the seeded Gaussian pair (dimension from experiment.dim, default 10)")

    p = add("reflow", "regenerate the coupling with a trained field and train the next round")
    p.add_argument("--model", metavar="DIR", required=True, help="trained field directory")
    p.add_argument("--source", metavar="OTF", help="(n, d) reference samples; default draws N(0, I)")

    p = add("attribute", "transport-flow attribution of inputs under a trained field")
    p.add_argument("--model", metavar="DIR", required=True, help="velocity field directory")
    p.add_argument("--score", metavar="SCORE", required=True, help="score model directory or additive-sin:<dim>")
    p.add_argument("--input", metavar="OTF", required=True, help="(d,) or (n, d) inputs")

    p = add("ig", "Integrated Gradients along the straight baseline-to-input path")
    p.add_argument("--score", metavar="SCORE", required=True, help="score model directory or additive-sin:<dim>")
    p.add_argument("--input", metavar="OTF", required=True, help="(d,) or (n, d) inputs")
    p.add_argument("--baseline", metavar="OTF", help="(d,) baseline; default zeros")

    p = add("path-metrics", "GPS, FCE, action and curvature of stored trajectories")
    p.add_argument("--trajectory", metavar="OTF", required=True, help="(K+1, d) or (K+1, n, d) states")
    p.add_argument("--model", metavar="DIR", help="field for FCE (optional)")

    p = add("eval-structure", "SATV and EAS of an attribution map against its image")
    p.add_argument("--attribution", metavar="OTF", required=True)
    p.add_argument("--image", metavar="OTF", required=True, help="(H, W) or (H, W, C) image")

    p = add("eval-deletion", "deletion curve and AUC")
    p.add_argument("--score", metavar="SCORE", required=True)
    p.add_argument("--image", metavar="OTF", required=True, help="(H, W) single-channel image")
    p.add_argument("--attribution", metavar="OTF", required=True)
    p.add_argument("--absolute", action="store_true", help="rank by |attribution| instead of signed value")

    for cmd, exp in EXPERIMENT_COMMANDS.items():
        add(cmd, f"run the {exp} experiment")
    return parser


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _load_score(spec: str):
    if spec.startswith("additive-sin:"):
        from .models import AdditiveSinScore

        try:
            return AdditiveSinScore(int(spec.split(":", 1)[1]))
        except ValueError:
            raise ValidationError(f"bad built-in score {spec!r}; expected additive-sin:<dim>") from None
    return load_model(spec)


def _load_points(path, dim: int) -> np.ndarray:
    x = load_tensor(path)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimMismatch(f"{path}: expected ({dim},) or (n, {dim}) values, got shape {x.shape}")
    return x


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.6f}"


class Run:
    """Per-invocation context: resolved config, seed, output directory and manifest."""

    def __init__(self, args):
        self.args = args
        self.config = parse_config(args.config) if getattr(args, "config", None) else default_config()
        self.seed = getattr(args, "seed", 0)
        self.quiet = getattr(args, "quiet", False)
        self.run_id = make_run_id(self.config, self.seed)
        self.out = Path(getattr(args, "out", None) or Path("runs") / self.run_id)
        self.manifest = RunManifest(self.run_id, args.command, self.config, self.seed, __version__)
        for name in ("config", "source", "target", "model", "score", "input", "baseline", "trajectory",
                     "attribution", "image"):
            value = getattr(args, name, None)
            if value and not str(value).startswith("additive-sin:"):
                if not Path(value).exists():
                    raise ValidationError(f"--{name}: no such file or directory: {value}")
                self.manifest.add_input(value)
        self.manifest.write(self.out)

    def say(self, text: str) -> None:
        if not self.quiet:
            print(text)

    def finish(self) -> None:
        self.manifest.status = "complete"
        self.manifest.record_outputs(self.out)
        self.manifest.write(self.out)
        self.say(f"wrote {self.out}")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _cmd_train(run: Run) -> None:
    from .experiments import gaussian_task
    from .rectflow import independent_sampler, train_flow

    a, cfg = run.args, run.config
    if a.gaussian_task:
        g0, g1 = gaussian_task(run.seed, cfg["experiment"]["dim"] or 10)
        sampler = independent_sampler(lambda r, n: g0.sample(r, n), lambda r, n: g1.sample(r, n))
        dim = g0.dim
    else:
        if not (a.source and a.target):
            raise ValidationError("train needs --source and --target sample files (or --gaussian-task)")
        z0, z1 = load_tensor(a.source), load_tensor(a.target)
        if z0.ndim != 2 or z1.ndim != 2 or z0.shape[1] != z1.shape[1]:
            raise DimMismatch(f"sample arrays must be (n, d) with equal d, got {z0.shape} and {z1.shape}")
        dim = z0.shape[1]
        draw0 = lambda r, n: z0[r.integers(0, len(z0), n)]  # noqa: E731
        draw1 = lambda r, n: z1[r.integers(0, len(z1), n)]  # noqa: E731
        sampler = independent_sampler(draw0, draw1)
    res = train_flow(sampler, mlp_spec(cfg, dim), train_config(cfg, run.seed))
    for ck in res.checkpoints:
        save_checkpoint(run.out, ck)
    save_model(run.out / "model", res.field)
    write_csv(run.out / "losses.csv", [{"iteration": i + 1, "loss": float(v)} for i, v in enumerate(res.losses)],
              ["iteration", "loss"])
    run.say(f"final loss {res.checkpoints[-1].loss_avg:.6g}")


def _cmd_reflow(run: Run) -> None:
    from .rectflow import reflow, train_flow
    from .tensor import RngStream

    a, cfg = run.args, run.config
    prev = load_model(a.model)
    if a.source:
        z = _load_points(a.source, prev.dim)
        sample_p0 = lambda r, n: z[r.integers(0, len(z), n)]  # noqa: E731
    else:
        sample_p0 = lambda r, n: r.standard_normal((n, prev.dim))  # noqa: E731
    rf = cfg["reflow"]
    coupling = reflow(prev, sample_p0, rf["pairs"], rf["K"], cfg["attribution"]["method"],
                      RngStream(run.seed, 2).generator())
    save_tensor(run.out / "coupling_z0.otf", coupling.z0)
    save_tensor(run.out / "coupling_z1.otf", coupling.z1)
    spec = getattr(prev, "spec", None) or mlp_spec(cfg, prev.dim)
    init = prev if (rf["warm_start"] and getattr(prev, "spec", None) == spec) else None
    res = train_flow(coupling.sampler(), spec, train_config(cfg, run.seed, stream=1), init=init)
    for ck in res.checkpoints:
        save_checkpoint(run.out, ck)
    save_model(run.out / "model", res.field)
    run.say(f"coupling cost {coupling.transport_cost():.6g}; final loss {res.checkpoints[-1].loss_avg:.6g}")


def _attribution_rows(attrs) -> list[dict]:
    return [{"index": i, "total": a.total, "score_change": a.score_change, "residual": a.residual}
            for i, a in enumerate(attrs)]


def _save_attr_batch(run: Run, attrs, states=None) -> None:
    values = np.stack([a.values for a in attrs])
    save_tensor(run.out / "attributions.otf", values)
    for i, a in enumerate(attrs):
        save_attribution(run.out / "items" / f"attr_{i}.otf", a, run.run_id)
    if states is not None:
        save_tensor(run.out / "trajectories.otf", states)
    write_csv(run.out / "attributions.csv", _attribution_rows(attrs), ["index", "total", "score_change", "residual"])
    for i, a in enumerate(attrs):
        run.say(f"[{i}] sum {a.total:.6f}  f(x1)-f(x0) {a.score_change:.6f}  residual {a.residual:.3e}")


def _cmd_attribute(run: Run) -> None:
    from .attribution import AttributionVector, transport_flow_batch

    a, ac = run.args, run.config["attribution"]
    vfield = load_model(a.model)
    score = _load_score(a.score)
    if score.dim != vfield.dim:
        raise DimMismatch(f"score dimension {score.dim} differs from field dimension {vfield.dim}")
    x1 = _load_points(a.input, vfield.dim)
    P, states = transport_flow_batch(score, vfield, x1, ac["K"], ac["method"], ac["endpoint_mode"],
                                     ac["quadrature"])
    f0, f1 = score.value(states[0]), score.value(states[-1])
    attrs = [AttributionVector(P[i], states[0, i], states[-1, i], float(f0[i]), float(f1[i]), ac["K"],
                               "transport-flow", ac["quadrature"]) for i in range(len(x1))]
    _save_attr_batch(run, attrs, states)


def _cmd_ig(run: Run) -> None:
    from .attribution import integrated_gradients

    a, ac = run.args, run.config["attribution"]
    score = _load_score(a.score)
    x1 = _load_points(a.input, score.dim)
    base = np.zeros(score.dim) if a.baseline is None else _load_points(a.baseline, score.dim)[0]
    attrs = [integrated_gradients(score, base, x, ac["K"], ac["quadrature"]) for x in x1]
    _save_attr_batch(run, attrs)


def _cmd_path_metrics(run: Run) -> None:
    from .metrics import path_geometry
    from .paths import Trajectory

    a = run.args
    states = load_tensor(a.trajectory)
    if states.ndim == 2:
        states = states[:, None, :]
    if states.ndim != 3:
        raise DimMismatch(f"{a.trajectory}: expected (K+1, d) or (K+1, n, d) states, got {states.shape}")
    vfield = load_model(a.model) if a.model else None
    rows = []
    for i in range(states.shape[1]):
        rep = path_geometry(Trajectory(states[:, i]), vfield)
        rows.append({"index": i, **rep.as_dict()})
    cols = ["index", "gps", "fce", "action", "curvature"]
    write_csv(run.out / "path_metrics.csv", rows, cols)
    run.say("  ".join(f"{c:>12}" for c in cols))
    for r in rows:
        run.say(f"{r['index']:>12}  " + "  ".join(f"{_fmt(r[c]):>12}" for c in cols[1:]))


def _image_and_attr(a):
    from .tensor import GridImage

    image = GridImage(load_tensor(a.image))
    attr = load_tensor(a.attribution)
    if attr.size != image.height * image.width:
        raise DimMismatch(f"attribution has {attr.size} values for a {image.height}x{image.width} image")
    return image, attr.reshape(image.height, image.width)


def _cmd_eval_structure(run: Run) -> None:
    from .metrics import eas, satv

    image, attr = _image_and_attr(run.args)
    alpha = run.config["metrics"]["alpha"]
    result = {"satv": satv(attr, image, alpha), "eas": eas(attr, image), "alpha": alpha}
    write_csv(run.out / "structure.csv", [result], ["satv", "eas", "alpha"])
    run.say(f"SATV {result['satv']:.6f}  EAS {result['eas']:.6f}")


def _cmd_eval_deletion(run: Run) -> None:
    from .metrics import deletion_curve

    a, mc = run.args, run.config["metrics"]
    image, attr = _image_and_attr(a)
    score = _load_score(a.score)
    curve = deletion_curve(score, image, attr.reshape(-1), mc["replacement"], mc["deletion_steps"],
                           absolute=a.absolute, blur_sigma=mc["blur_sigma"])
    rows = [{"fraction": f, "score": s} for f, s in zip(curve.fractions, curve.scores)]
    write_csv(run.out / "deletion.csv", rows, ["fraction", "score"])
    write_json(run.out / "deletion.json", {"auc": curve.auc, "replacement": curve.replacement,
                                           "steps": mc["deletion_steps"]})
    run.say(f"deletion AUC ({curve.replacement}) {curve.auc:.6f}")


def _cmd_experiment(run: Run) -> None:
    from .experiments import DEFAULT_PARAMS, ExperimentSpec, run_experiment

    exp = EXPERIMENT_COMMANDS[run.args.command]
    params = experiment_overrides(run.config, DEFAULT_PARAMS[exp])
    if hasattr(run.args, "seed"):
        n = len(params.get("seeds", DEFAULT_PARAMS[exp]["seeds"]))
        params["seeds"] = [run.seed + i for i in range(n)]
    ac = run.config["attribution"]
    spec = ExperimentSpec(exp, params, method=ac["method"], endpoint_mode=ac["endpoint_mode"],
                          out_dir=str(run.out))
    report = run_experiment(spec)
    for name, ok in report.flags.items():
        run.say(f"{'PASS' if ok else 'FAIL'}  {name}")


COMMANDS = {
    "train": _cmd_train,
    "reflow": _cmd_reflow,
    "attribute": _cmd_attribute,
    "ig": _cmd_ig,
    "path-metrics": _cmd_path_metrics,
    "eval-structure": _cmd_eval_structure,
    "eval-deletion": _cmd_eval_deletion,
    **{cmd: _cmd_experiment for cmd in EXPERIMENT_COMMANDS},
}


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    quiet = getattr(args, "quiet", False)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    try:
        run = Run(args)
        COMMANDS[args.command](run)
        run.finish()
    except NumericError as exc:
        print(f"otflow: numeric failure: {exc}", file=sys.stderr)
        return 2
    except (OtflowError, ValueError, OSError) as exc:
        print(f"otflow: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
