"""Command line front end.

Subcommands:
    sinkhorn   solve one entropic transport instance from a JSON file
    gradcheck  finite-difference verification suites, JSON report
    distill    full training run driven by an experiment config
    eval       metrics for a finished run directory
    ablate     objective-toggle grid at toy scale, one run per row
    plot       metrics CSVs -> SVG curves, or run directory -> sample scatter

Failures print a single JSON line to stderr:
    {"error": {"code": <int>, "kind": <str>, "message": <str>}}

Exit codes: 0 success, 2 bad config or missing file, 3 numerical failure,
4 non-convergence. Identical inputs and seed give byte-identical primary
artifacts; SVG output carries no timestamps.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gen_model as gmod
from . import nn_core as nc
from . import objectives as obj
from . import ot_core as ot
from . import plots
from . import trainer as tr

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_NONCONVERGED = 4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.message = message


# ---------------------------------------------------------------------------
# experiment config
# ---------------------------------------------------------------------------


_EXPERIMENT_KEYS = {"train", "out_dir", "eval_every", "eval_samples",
                    "checkpoint_every", "make_plots"}


@dataclass(frozen=True)
class ExperimentConfig:
    """One training experiment: the trainer config plus artifact plumbing."""

    train: tr.TrainConfig = field(default_factory=tr.TrainConfig)
    out_dir: str = "runs/exp"
    eval_every: int = 250
    eval_samples: int = 128
    checkpoint_every: int = 0
    make_plots: bool = False

    def __post_init__(self):
        if not isinstance(self.train, tr.TrainConfig):
            raise ValueError("train must be a TrainConfig")
        if not isinstance(self.out_dir, str) or not self.out_dir:
            raise ValueError("out_dir must be a nonempty string")
        for name in ("eval_every", "eval_samples", "checkpoint_every"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer")
        if not 1 <= self.eval_samples <= 512:
            raise ValueError("eval_samples must be in [1, 512]")
        if not isinstance(self.make_plots, bool):
            raise ValueError("make_plots must be a bool")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ValueError("experiment config must be a JSON object")
        for k in doc:
            if k not in _EXPERIMENT_KEYS:
                raise ValueError(f"unknown experiment config key {k!r}")
        kwargs = dict(doc)
        kwargs["train"] = tr.TrainConfig.from_dict(doc.get("train", {}))
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"] = self.train.to_dict()
        return d


# ---------------------------------------------------------------------------
# small IO helpers
# ---------------------------------------------------------------------------


def _read_json(path, kind="config"):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise CliError(EXIT_CONFIG, "missing-file", f"cannot read {path}: {e}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise CliError(EXIT_CONFIG, kind, f"invalid JSON in {path}: {e}")


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _emit(args, doc):
    """Result JSON: pretty file with --out, compact line on stdout without."""
    if getattr(args, "out", None):
        _write_json(args.out, doc)
    else:
        sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")


def _print_error(err: CliError):
    line = json.dumps({"error": {"code": err.code, "kind": err.kind,
                                 "message": err.message}}, sort_keys=True)
    sys.stderr.write(line + "\n")


def _load_experiment(args) -> ExperimentConfig:
    if not getattr(args, "config", None):
        raise CliError(EXIT_CONFIG, "config", "--config is required here")
    doc = _read_json(args.config)
    try:
        cfg = ExperimentConfig.from_dict(doc)
        train = cfg.train
        if getattr(args, "seed", None) is not None:
            train = dataclasses.replace(train, seed=args.seed)
        if getattr(args, "steps", None) is not None:
            train = dataclasses.replace(train, max_step=args.steps)
        out_dir = args.out if getattr(args, "out", None) else cfg.out_dir
        return dataclasses.replace(cfg, train=train, out_dir=out_dir)
    except (ValueError, TypeError) as e:
        raise CliError(EXIT_CONFIG, "config", str(e))


def _load_checkpoint(path) -> nc.MlpParams:
    try:
        return nc.load_mlp(path)
    except OSError as e:
        raise CliError(EXIT_CONFIG, "missing-file", f"cannot read {path}: {e}")
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise CliError(EXIT_CONFIG, "checkpoint", f"bad checkpoint {path}: {e}")


def _shapes(params: nc.MlpParams):
    return [tuple(w.shape) for w in params.weights]


def _restore_run(run_dir: Path, args):
    """Rebuild a TrainState around the final checkpoints of a run directory."""
    cfg_path = Path(args.config) if getattr(args, "config", None) else run_dir / "config.json"
    doc = _read_json(cfg_path)
    try:
        ecfg = ExperimentConfig.from_dict(doc)
    except (ValueError, TypeError) as e:
        raise CliError(EXIT_CONFIG, "config", str(e))
    # checkpoints carry the trained weights, so the expensive warmup stage
    # must not rerun here
    train = dataclasses.replace(ecfg.train, acc_init=False)
    state = tr.init_state(train)
    theta = _load_checkpoint(run_dir / "generator_final.json")
    phi = _load_checkpoint(run_dir / "fake_score_final.json")
    if _shapes(theta) != _shapes(state.theta):
        raise CliError(EXIT_CONFIG, "checkpoint",
                       "generator checkpoint does not match the config's layer widths")
    if _shapes(phi) != _shapes(state.phi):
        raise CliError(EXIT_CONFIG, "checkpoint",
                       "score-net checkpoint does not match the config's layer widths")
    state.theta = theta
    state.phi = phi
    disc_path = run_dir / "discriminator_final.json"
    if disc_path.exists():
        try:
            state.disc = obj.load_discriminator(disc_path)
        except (ValueError, KeyError, json.JSONDecodeError) as e:
            raise CliError(EXIT_CONFIG, "checkpoint", f"bad checkpoint {disc_path}: {e}")
    if getattr(args, "seed", None) is not None:
        # swaps only the evaluation draw, not the trained weights
        state.cfg = dataclasses.replace(state.cfg, seed=args.seed)
    return state, ecfg


def _sample_clouds(state: tr.TrainState, n: int) -> dict:
    """Deterministic generated/target clouds on the [seed, 5] stream."""
    rng = np.random.default_rng([state.cfg.seed, 5])
    z = rng.normal(0.0, 1.0, (n, state.cfg.dim))
    generated = gmod.rollout_sample(state.theta, z, state.cond, state.schedule,
                                    rng, state.cfg.temb_dim)
    target = gmod.gm_sample(state.target, n, rng)
    return {"generated": generated, "target": target}


def _proj2(arr: np.ndarray) -> np.ndarray:
    if arr.shape[1] >= 2:
        return arr[:, :2]
    return np.column_stack([arr[:, 0], np.zeros(len(arr))])


def _read_metrics_csv(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise CliError(EXIT_CONFIG, "missing-file", f"cannot read {path}: {e}")
    lines = text.splitlines()
    if not lines or lines[0] != tr.METRICS_HEADER:
        raise CliError(EXIT_CONFIG, "csv", f"malformed metrics CSV {path}: unexpected header")
    names = tr.METRICS_HEADER.split(",")
    cols = {n: [] for n in names}
    for ln in lines[1:]:
        if not ln:
            continue
        parts = ln.split(",")
        if len(parts) != len(names):
            raise CliError(EXIT_CONFIG, "csv",
                           f"malformed metrics CSV {path}: row has {len(parts)} fields")
        try:
            for n, v in zip(names, parts):
                if n == "branch":
                    cols[n].append(v)
                elif n in ("step", "sinkhorn_iters", "wall_ms"):
                    cols[n].append(int(v) if v else None)
                else:
                    cols[n].append(float(v) if v else None)
        except ValueError:
            raise CliError(EXIT_CONFIG, "csv",
                           f"malformed metrics CSV {path}: non-numeric field in row")
    return cols


def _write_run_plots(out_dir: Path, state: tr.TrainState, n: int):
    cols = _read_metrics_csv(out_dir / "metrics.csv")
    svg = plots.svg_line_chart([(out_dir.name, cols["step"], cols["w2"])],
                               title="sample-cloud transport cost",
                               xlabel="step", ylabel="w2")
    (out_dir / "training_curves.svg").write_text(svg)
    clouds = _sample_clouds(state, n)
    svg = plots.svg_scatter([("generated", _proj2(clouds["generated"])),
                             ("target", _proj2(clouds["target"]))],
                            title="samples, first two coordinates")
    (out_dir / "samples.svg").write_text(svg)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


_INSTANCE_KEYS = {"D", "u", "mu", "epsilon", "tol", "max_iter"}


def cmd_sinkhorn(args) -> int:
    doc = _read_json(args.instance, kind="instance")
    if not isinstance(doc, dict):
        raise CliError(EXIT_CONFIG, "instance", "instance must be a JSON object")
    for k in doc:
        if k not in _INSTANCE_KEYS:
            raise CliError(EXIT_CONFIG, "instance", f"unknown instance key {k!r}")
    if "D" not in doc:
        raise CliError(EXIT_CONFIG, "instance", "instance needs a cost matrix 'D'")
    try:
        D = np.asarray(doc["D"], np.float64)
        if D.ndim != 2:
            raise ValueError("D must be a 2-D matrix")
        I, J = D.shape
        u = np.asarray(doc["u"], np.float64) if "u" in doc else np.full(I, 1.0 / I)
        mu = np.asarray(doc["mu"], np.float64) if "mu" in doc else np.full(J, 1.0 / J)
        mg = ot.mg_check(ot.Marginals(u, mu), I, J)
        sol = ot.sinkhorn_log(D, mg,
                              epsilon=float(doc.get("epsilon", ot.DEFAULT_EPSILON)),
                              tol=float(doc.get("tol", ot.DEFAULT_TOL)),
                              max_iter=int(doc.get("max_iter", ot.DEFAULT_MAX_ITER)))
    except (ValueError, TypeError) as e:
        raise CliError(EXIT_CONFIG, "instance", str(e))
    _emit(args, {
        "plan": sol.plan.tolist(),
        "f": sol.f.tolist(),
        "g": sol.g.tolist(),
        "value": sol.value,
        "transport_cost": sol.transport_cost,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "epsilon": sol.epsilon,
    })
    if not sol.converged:
        if not args.quiet:
            sys.stderr.write("solve hit the iteration cap before tol\n")
        return EXIT_NONCONVERGED
    return EXIT_OK


def _relerr(fd, an):
    fd, an = np.asarray(fd, np.float64), np.asarray(an, np.float64)
    return float(np.linalg.norm(fd - an) / max(np.linalg.norm(fd), np.linalg.norm(an), 1e-12))


def _check_mlp_gradients(seed: int) -> float:
    rng = np.random.default_rng([seed, 11])
    params = nc.init_mlp([3, 8, 2], rng)
    x = rng.standard_normal((4, 3))
    graph = nc.Graph()
    ws, bs, leaves = nc.lift_mlp(graph, params, trainable=True)
    loss = nc.mlp_forward(ws, bs, x).square().mean()
    grads = nc.backward(loss, leaves)

    def loss_at(plist):
        return float(np.mean(np.square(nc.mlp_apply(params.with_param_list(plist), x))))

    def probed(li, ci, delta):
        plist = [p.copy() for p in params.param_list()]
        plist[li].ravel()[ci] += delta
        return loss_at(plist)

    h = 1e-6
    fd_vals, an_vals = [], []
    for _ in range(12):
        li = int(rng.integers(len(leaves)))
        ci = int(rng.integers(params.param_list()[li].size))
        fd_vals.append((probed(li, ci, h) - probed(li, ci, -h)) / (2 * h))
        an_vals.append(grads[li].ravel()[ci])
    return _relerr(fd_vals, an_vals)


def _check_envelope(seed: int) -> float:
    rng = np.random.default_rng([seed, 12])
    A = rng.normal(0.0, 1.0, (6, 2))
    B = rng.normal(0.0, 1.0, (6, 2))
    eps, tol, cap = 0.5, 1e-12, 20000

    def value(Aq):
        D = ot.pairwise_half_sq_euclidean(Aq, B)
        return ot.sinkhorn_log(D, epsilon=eps, tol=tol, max_iter=cap).value

    sol = ot.sinkhorn_log(ot.pairwise_half_sq_euclidean(A, B),
                          epsilon=eps, tol=tol, max_iter=cap)
    ga, _ = ot.grad_wrt_samples(A, B, sol.plan)
    h = 1e-5
    fd_vals, an_vals = [], []
    for _ in range(6):
        i, d = int(rng.integers(A.shape[0])), int(rng.integers(A.shape[1]))
        Ap, Am = A.copy(), A.copy()
        Ap[i, d] += h
        Am[i, d] -= h
        fd_vals.append((value(Ap) - value(Am)) / (2 * h))
        an_vals.append(ga[i, d])
    return _relerr(fd_vals, an_vals)


def _check_denoiser_vjp(seed: int) -> float:
    rng = np.random.default_rng([seed, 13])
    net = nc.init_mlp([2 + 8, 10, 2], rng)
    score = obj.DenoiserScore(net, 0.5)
    x = rng.normal(0.0, 1.0, (5, 2))
    v = rng.normal(0.0, 1.0, (5, 2))
    an = score.vjp(x, v)
    h = 1e-6
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd[idx] = (np.sum(v * score(xp)) - np.sum(v * score(xm))) / (2 * h)
    return _relerr(fd, an)


def _check_otd_chain(seed: int) -> float:
    # fixed-budget solves on both routes: the truncated value map is smooth,
    # so the frozen-plan chain gradient tracks its finite differences
    rng = np.random.default_rng([seed, 14])
    mix = gmod.gm_ring(3, radius=2.0, sigma=0.4, frames=1)
    net = nc.init_mlp([2 + 8, 10, 2], rng)
    fake = obj.DenoiserScore(net, 0.5)
    real = obj.AnalyticMixtureScore(mix, 0.5)
    X = rng.normal(0.0, 1.0, (4, 2))
    eps, tol, cap = 0.1, 1e-9, 5000
    res = obj.otd_gradient(X, fake, real, epsilon=eps, tol=tol, max_iter=cap)

    def value(Xq):
        D = ot.pairwise_half_sq_euclidean(fake(Xq), real(Xq))
        return ot.sinkhorn_log(D, epsilon=eps, tol=tol, max_iter=cap).value

    h = 1e-4
    fd = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        fd[idx] = (value(Xp) - value(Xm)) / (2 * h)
    return _relerr(fd, res.grad)


_GRADCHECKS = [
    ("mlp_parameter_gradients", _check_mlp_gradients, 1e-4),
    ("transport_envelope", _check_envelope, 1e-4),
    ("denoiser_score_vjp", _check_denoiser_vjp, 1e-4),
    ("otd_chain", _check_otd_chain, 1e-2),
]


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    checks = []
    for name, fn, tol in _GRADCHECKS:
        rel = fn(seed)
        checks.append({"name": name, "max_rel_err": rel, "tol": tol,
                       "pass": bool(rel < tol)})
        if not args.quiet:
            word = "ok" if rel < tol else "FAIL"
            sys.stderr.write(f"{name}: rel {rel:.3e} tol {tol:.0e} {word}\n")
    report = {"seed": seed, "checks": checks,
              "all_pass": all(c["pass"] for c in checks)}
    _emit(args, report)
    return EXIT_OK if report["all_pass"] else EXIT_NUMERIC


def cmd_distill(args) -> int:
    ecfg = _load_experiment(args)
    out_dir = Path(ecfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "config.json", ecfg.to_dict())
    state, rows = tr.run_training(ecfg.train, out_dir=out_dir,
                                  eval_every=ecfg.eval_every,
                                  eval_samples=ecfg.eval_samples,
                                  checkpoint_every=ecfg.checkpoint_every,
                                  quiet=args.quiet)
    if ecfg.make_plots:
        _write_run_plots(out_dir, state, ecfg.eval_samples)
    if not args.quiet:
        last = rows[-1] if rows else None
        sys.stdout.write(json.dumps({
            "out_dir": str(out_dir),
            "steps": state.step,
            "w2": None if last is None else last.w2,
            "mode_coverage": None if last is None else last.mode_coverage,
        }, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    state, ecfg = _restore_run(run_dir, args)
    schedule = state.schedule
    k = len(schedule.steps)
    if args.steps is not None:
        if not 1 <= args.steps <= k:
            raise CliError(EXIT_CONFIG, "config",
                           f"--steps must be in [1, {k}] for this schedule")
        k = args.steps
        schedule = gmod.NoiseSchedule(schedule.steps[:k])
    metrics = tr.evaluate(state, n_samples=ecfg.eval_samples, schedule=schedule)
    metrics["run_dir"] = str(run_dir)
    metrics["rollout_steps"] = k
    _emit(args, metrics)
    return EXIT_OK


# toggle grid: all on, each regularizer removed once, warmup removed, all off
ABLATION_ROWS = [
    ("full", True, True, True),
    ("dmd_otd_gan", True, True, False),
    ("dmd_otd_acc", True, False, True),
    ("dmd_gan_acc", False, True, True),
    ("dmd_acc", False, False, True),
    ("dmd_only", False, False, False),
]


def cmd_ablate(args) -> int:
    ecfg = _load_experiment(args)
    root = Path(ecfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    _write_json(root / "config.json", ecfg.to_dict())

    def one(row):
        name, otd, gan, acc = row
        tcfg = dataclasses.replace(ecfg.train, enable_otd=otd, enable_gan=gan,
                                   acc_init=acc)
        rdir = root / name
        state, _ = tr.run_training(tcfg, out_dir=rdir,
                                   eval_every=ecfg.eval_every,
                                   eval_samples=ecfg.eval_samples,
                                   quiet=True)
        m = tr.evaluate(state, n_samples=ecfg.eval_samples)
        return name, {"enable_otd": otd, "enable_gan": gan, "acc_init": acc,
                      "w2": m["w2"], "mode_coverage": m["mode_coverage"],
                      "score_error": m["score_error"]}

    workers = max(1, int(os.environ.get("OTDLAB_THREADS", "1")))
    if workers == 1:
        results = [one(r) for r in ABLATION_ROWS]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, ABLATION_ROWS))
    summary = {"rows": {name: info for name, info in results}}
    _write_json(root / "summary.json", summary)
    if not args.quiet:
        sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_plot(args) -> int:
    if not args.out:
        raise CliError(EXIT_CONFIG, "usage", "plot needs --out <svg path>")
    if args.kind == "curves":
        metric = args.metric
        allowed = [n for n in tr.METRICS_HEADER.split(",")
                   if n not in ("step", "branch")]
        if metric not in allowed:
            raise CliError(EXIT_CONFIG, "usage",
                           f"unknown metric {metric!r}; choose from {allowed}")
        series = []
        for path in args.inputs:
            cols = _read_metrics_csv(path)
            name = Path(path).resolve().parent.name
            series.append((name, cols["step"], cols[metric]))
        svg = plots.svg_line_chart(series, title=metric, xlabel="step",
                                   ylabel=metric)
    else:
        if len(args.inputs) != 1:
            raise CliError(EXIT_CONFIG, "usage", "scatter takes exactly one run directory")
        state, ecfg = _restore_run(Path(args.inputs[0]), args)
        clouds = _sample_clouds(state, ecfg.eval_samples)
        svg = plots.svg_scatter([("generated", _proj2(clouds["generated"])),
                                 ("target", _proj2(clouds["target"]))],
                                title="samples, first two coordinates")
    Path(args.out).write_text(svg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Bad usage surfaces as the same JSON error shape as bad configs."""

    def error(self, message):
        raise CliError(EXIT_CONFIG, "usage", message)


def _build_parser() -> _Parser:
    p = _Parser(prog="otdlab",
                description="toy-scale transport-regularized distillation lab")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=False, steps=False, config=False):
        sp.add_argument("--out", default=None, help="output path or directory")
        sp.add_argument("--quiet", action="store_true")
        if config:
            sp.add_argument("--config", default=None, help="experiment config JSON")
        if seed:
            sp.add_argument("--seed", type=int, default=None)
        if steps:
            sp.add_argument("--steps", type=int, default=None)

    sp = sub.add_parser("sinkhorn", help="solve one transport instance")
    sp.add_argument("instance", help="JSON file with D and optional u, mu, "
                                     "epsilon, tol, max_iter")
    common(sp)
    sp.set_defaults(func=cmd_sinkhorn)

    sp = sub.add_parser("gradcheck", help="finite-difference suites")
    common(sp, seed=True)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("distill", help="full training run")
    common(sp, seed=True, steps=True, config=True)
    sp.set_defaults(func=cmd_distill)

    sp = sub.add_parser("eval", help="metrics for a run directory")
    sp.add_argument("run", help="directory written by distill")
    common(sp, seed=True, steps=True, config=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="objective-toggle grid")
    common(sp, seed=True, steps=True, config=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("plot", help="SVG charts from run artifacts")
    sp.add_argument("kind", choices=["curves", "scatter"])
    sp.add_argument("inputs", nargs="+",
                    help="metrics CSV paths (curves) or one run directory (scatter)")
    sp.add_argument("--metric", default="w2")
    common(sp, seed=True, config=True)
    sp.set_defaults(func=cmd_plot)

    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as e:
        _print_error(e)
        return e.code
    except nc.NonFiniteError as e:
        _print_error(CliError(EXIT_NUMERIC, "non-finite", str(e)))
        return EXIT_NUMERIC
    except ValueError as e:
        _print_error(CliError(EXIT_CONFIG, "config", str(e)))
        return EXIT_CONFIG
    except OSError as e:
        _print_error(CliError(EXIT_CONFIG, "io", str(e)))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
