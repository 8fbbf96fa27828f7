"""Command-line front end.

Precedence for every setting: built-in defaults, then ``--config`` (an
experiment JSON file), then explicit flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as dp
from .builder import FitConfig, Variant, fit
from .errors import GradflowError, ParseError
from .evaluation import cross_validate, reproduce_paper_experiment
from .potential import (
    DcPotential,
    model_from_json,
    model_to_json,
    predict_field_batch,
    tau_for_accuracy,
)

VARIANTS = [v.value for v in Variant]


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _floats(text: str) -> tuple[float, ...]:
    return tuple(_vector(text))


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _load_config(args) -> dp.ExperimentConfig:
    cfg = dp.load_config(args.config) if getattr(args, "config", None) else dp.ExperimentConfig()
    overrides = {}
    for flag, key in (
        ("sigma_w", "sigma_w"), ("dt", "dt"), ("window", "window"), ("degree", "degree"),
        ("lambda_grid", "lambda_grid"), ("tau_grid", "tau_grid"), ("train_fraction", "train_fraction"),
        ("variant", "variant"), ("n_traj", "n_traj"), ("n_samples", "n_samples"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return cfg.replace(**overrides) if overrides else cfg


def _emit(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _fit_config(args, parser) -> FitConfig:
    variant = Variant(args.variant)
    if variant.is_strong and args.mu is None:
        parser.error(f"--mu is required for the {variant.value} variant")
    if variant is Variant.EQUILIBRIUM and args.x0 is None:
        parser.error("--x0 is required for the equilibrium variant")
    if variant is Variant.DC_PARAMETRIC and args.basis is None:
        parser.error("--basis is required for the dc-parametric variant")
    return FitConfig(variant, lam=args.lam, mu=args.mu, x0=args.x0, basis=args.basis)


# ----------------------------------------------------------------------------
# subcommands

def cmd_simulate(args, parser):
    cfg = _load_config(args)
    if args.x0 is not None:
        spec = cfg.field()
        t = cfg.dt * np.arange(args.steps)
        trajs = [dp.simulate_gradient_flow(spec, args.x0, t, cfg.h_max)]
        rng = np.random.default_rng(cfg.seed)
    else:
        ss_layout, ss_noise = np.random.SeedSequence(cfg.seed).spawn(2)
        trajs = dp.simulate_protocol(cfg, np.random.default_rng(ss_layout))
        rng = np.random.default_rng(ss_noise)
    trajs = [dp.add_state_noise(tr, cfg.sigma_w, rng) for tr in trajs]
    paths = dp.write_trajectories(trajs, args.out)
    print(f"wrote {len(paths)} trajectories ({sum(len(t) for t in trajs)} samples) to {args.out}")


def cmd_derivatives(args, parser):
    cfg = _load_config(args)
    files = list(args.trajectories or [])
    if args.dir:
        files += sorted(
            os.path.join(args.dir, f) for f in os.listdir(args.dir) if f.endswith(".csv")
        )
    if not files:
        parser.error("give trajectory files or --dir")
    est = []
    for f in files:
        tr = dp.read_trajectory_csv(f)
        est.append(dp.estimate_derivatives(tr, dp.effective_window(cfg.window, cfg.degree, len(tr)), cfg.degree))
    data = dp.assemble_dataset(est)
    _emit(dp.write_dataset_csv(data), args.out)
    if args.out not in (None, "-"):
        print(f"wrote {data.n_s} samples to {args.out}")


def cmd_fit(args, parser):
    cfg = _fit_config(args, parser)
    data = dp.read_dataset_csv(args.dataset)
    res = fit(data, cfg)
    text = model_to_json(res.model) + "\n"
    _emit(text, args.out)
    sol = res.solution
    stream = sys.stdout if args.out not in (None, "-") else sys.stderr
    print(f"objective {sol.objective:.12g}", file=stream)
    print(
        f"feasibility residual {sol.primal_residual:.3e} "
        f"(dual {sol.dual_residual:.3e}, complementarity {sol.comp_slackness:.3e}, status {sol.status.value})",
        file=stream,
    )


def cmd_predict(args, parser):
    with open(args.model, encoding="utf-8") as fh:
        model = model_from_json(fh.read())
    X = dp.read_points_csv(args.points)
    if X.shape[1] != model.n:
        parser.error(f"points have dimension {X.shape[1]}, model expects {model.n}")
    F = predict_field_batch(model, args.tau, X)
    header = [f"x{i + 1}" for i in range(model.n)] + [f"f{i + 1}" for i in range(model.n)]
    _emit(dp.write_rows_csv(None, header, np.column_stack([X, F])), args.out)


def cmd_crossval(args, parser):
    cfg = _load_config(args)
    fcfg = _fit_config(args, parser)
    data = dp.read_dataset_csv(args.dataset)
    train, holdout = dp.split_dataset(data, cfg.train_fraction, cfg.seed)
    lam, tau, report = cross_validate(
        train, holdout, cfg.lambda_grid, cfg.tau_grid, fcfg, jobs=args.jobs, folds=args.folds, seed=cfg.seed
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_json() + "\n")
        with open(os.path.join(args.out, "model.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(model_to_json(report.model) + "\n")
    print(f"lambda {lam:.6g} tau {tau:.6g} r_squared {report.r_squared:.6f}")


def cmd_reproduce(args, parser):
    cfg = _load_config(args)
    report = reproduce_paper_experiment(cfg.seed, cfg, out_dir=args.out, jobs=args.jobs)
    m = report.metrics
    print(
        f"holdout R^2 (true field) {report.r_squared:.4f}; "
        f"holdout R^2 (estimated derivatives) {m['holdout_r2_estimates']:.4f}; "
        f"lambda {report.lam:.3g}, tau {report.tau:.3g}"
    )
    if args.out:
        print(f"report and surfaces written to {args.out}")


def cmd_inspect(args, parser):
    with open(args.model, encoding="utf-8") as fh:
        model = model_from_json(fh.read())
    if isinstance(model, DcPotential):
        summary = {
            "kind": "dc",
            "n": model.n,
            "planes": [model.phi1.n_planes, model.phi2.n_planes],
            "basis": model.basis,
            "alpha": None if model.alpha is None else np.asarray(model.alpha).tolist(),
            "tau_for_1e-2": tau_for_accuracy(1e-2, max(model.n_s, 2), dc=True),
        }
    else:
        summary = {
            "kind": "max-affine",
            "n": model.n,
            "planes": model.n_planes,
            "sign": model.sign,
            "unique": model.unique,
            "tau_for_1e-2": tau_for_accuracy(1e-2, max(model.n_planes, 2)),
        }
    print(json.dumps(summary, indent=2))


# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json-errors", action="store_true", default=argparse.SUPPRESS,
                        help="report runtime errors as JSON on stderr")

    fitting = argparse.ArgumentParser(add_help=False)
    fitting.add_argument("--variant", choices=VARIANTS, default="dc")
    fitting.add_argument("--lambda", dest="lam", type=float, default=1e-8)
    fitting.add_argument("--mu", type=float)
    fitting.add_argument("--x0", type=_vector, help="equilibrium point, e.g. 0,0")
    fitting.add_argument("--basis", choices=["constant", "linear", "affine"],
                         help="parametric basis of the dc-parametric variant")

    experiment = argparse.ArgumentParser(add_help=False)
    experiment.add_argument("--config", help="experiment config JSON")
    experiment.add_argument("--sigma-w", dest="sigma_w", type=float)
    experiment.add_argument("--dt", type=float)
    experiment.add_argument("--window", type=int)
    experiment.add_argument("--degree", type=int, choices=[2, 3])

    p = argparse.ArgumentParser(prog="gradflow", description="Identify gradient-flow dynamics from trajectories.")
    p.add_argument("--json-errors", action="store_true", default=False,
                   help="report runtime errors as JSON on stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("simulate", parents=[common, experiment], help="simulate noisy trajectories")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--x0", type=_vector, help="single trajectory from this point instead of the protocol")
    s.add_argument("--steps", type=_positive_int, default=7, help="samples of the --x0 trajectory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("derivatives", parents=[common, experiment], help="estimate derivatives into a dataset")
    s.add_argument("trajectories", nargs="*", help="trajectory CSV files")
    s.add_argument("--dir", help="directory of trajectory CSV files")
    s.add_argument("--out", help="dataset CSV (stdout if omitted)")
    s.set_defaults(func=cmd_derivatives)

    s = sub.add_parser("fit", parents=[common, fitting], help="fit a potential to a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", help="model JSON (stdout if omitted)")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", parents=[common], help="evaluate the smoothed field of a model")
    s.add_argument("--model", required=True)
    s.add_argument("--tau", type=float, required=True)
    s.add_argument("--points", required=True, help="CSV with header x1,...,xn")
    s.add_argument("--out", help="output CSV (stdout if omitted)")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("crossval", parents=[common, fitting], help="select lambda and tau on a holdout split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--config", help="experiment config JSON (grids, train fraction)")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--lambda-grid", dest="lambda_grid", type=_floats)
    s.add_argument("--tau-grid", dest="tau_grid", type=_floats)
    s.add_argument("--train-fraction", dest="train_fraction", type=float)
    s.add_argument("--folds", type=int, help="k-fold CV on the pooled data instead of one holdout")
    s.add_argument("--jobs", type=_positive_int, default=1)
    s.add_argument("--out", help="directory for report.json and model.json")
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("reproduce-paper", parents=[common, experiment], help="run the quartic benchmark end to end")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", help="directory for the report, surface and data files")
    s.add_argument("--jobs", type=_positive_int, default=1)
    s.set_defaults(func=cmd_reproduce)

    s = sub.add_parser("inspect-model", parents=[common], help="summarise a model file")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def _report_error(exc, as_json: bool) -> None:
    if as_json:
        doc = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ParseError):
            doc["line"], doc["column"] = exc.line, exc.column
        sys.stderr.write(json.dumps(doc) + "\n")
    else:
        sys.stderr.write(f"error: {exc}\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args, parser)
    except (GradflowError, OSError, ValueError) as exc:
        _report_error(exc, args.json_errors)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
