"""Fit quality, hyperparameter selection and the benchmark experiment."""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .builder import Dataset, FitConfig, fit
from .data import (
    ExperimentConfig,
    generate_dataset,
    potential_gradient,
    split_dataset,
    write_dataset_csv,
    write_rows_csv,
)
from .errors import DegenerateTruth, DimensionMismatch, DomainError, GradflowError, SolverFailure
from .potential import model_to_json, predict_field_batch
from .qp import SolverSettings, kkt_residuals


def r_squared(predicted, truth) -> float:
    """Coefficient of determination pooled over every component."""
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise DimensionMismatch(f"predicted {p.shape} vs truth {t.shape}")
    if t.size == 0:
        raise DomainError("r_squared needs at least one sample")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateTruth("truth is constant; R^2 is undefined")
    return 1.0 - float(np.sum((p - t) ** 2)) / ss_tot


@dataclass
class FitReport:
    r_squared: float
    residuals: np.ndarray
    lam: float
    tau: float
    diagnostics: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    model: object = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "r_squared": self.r_squared,
            "lambda": self.lam,
            "tau": self.tau,
            "residuals": np.asarray(self.residuals).tolist(),
            "metrics": self.metrics,
            "diagnostics": self.diagnostics,
            "timing": self.timing,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)


def _fit_one(args):
    data, cfg, settings = args
    t0 = time.perf_counter()
    try:
        res = fit(data, cfg, settings)
    except GradflowError as exc:
        return None, {"lambda": cfg.lam, "error": type(exc).__name__, "message": str(exc)}, time.perf_counter() - t0
    sol = res.solution
    diag = {
        "lambda": cfg.lam,
        "status": sol.status.value,
        "objective": sol.objective,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "comp_slackness": sol.comp_slackness,
        "iterations": sol.iterations,
    }
    return res, diag, time.perf_counter() - t0


def _fit_grid(data, cfg, lambdas, settings, jobs):
    tasks = [(data, replace(cfg, lam=float(lam)), settings) for lam in lambdas]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_fit_one, tasks))
    return [_fit_one(t) for t in tasks]


def _select(scores):
    """Best ``(r2, lam, tau)``; ties favour larger lambda, then larger tau."""
    return max(scores, key=lambda s: (s[0], s[1], s[2]))


def cross_validate(
    train: Dataset,
    holdout: Dataset,
    lambda_grid,
    tau_grid,
    cfg: FitConfig,
    settings: SolverSettings | None = None,
    jobs: int = 1,
    folds: int | None = None,
    seed=0,
) -> tuple[float, float, FitReport]:
    """Pick ``(lambda, tau)`` by holdout R^2 of the predicted field.

    One fit per lambda on ``train``; every tau is then scored on ``holdout``.
    With ``folds = k`` the two sets are pooled and scored by k-fold CV instead,
    and the reported model is refit on the pooled data.  Failed fits are
    recorded in the diagnostics; only a grid where every fit fails raises.
    """
    lambdas = [float(v) for v in lambda_grid]
    taus = [float(v) for v in tau_grid]
    if not lambdas or not taus:
        raise DomainError("lambda and tau grids must be nonempty")
    if any(not t > 0 for t in taus) or any(v < 0 for v in lambdas):
        raise DomainError("tau must be positive and lambda nonnegative")
    t0 = time.perf_counter()
    if folds:
        return _kfold(train, holdout, lambdas, taus, cfg, settings, jobs, folds, seed, t0)

    results = _fit_grid(train, cfg, lambdas, settings, jobs)
    scores, table, failures = [], [], []
    for lam, (res, diag, secs) in zip(lambdas, results):
        diag["seconds"] = secs
        if res is None:
            failures.append(diag)
            continue
        row = dict(diag, holdout_r2={})
        for tau in taus:
            pred = predict_field_batch(res.model, tau, holdout.x)
            r2 = r_squared(pred, holdout.y)
            row["holdout_r2"][repr(tau)] = r2
            scores.append((r2, lam, tau))
        table.append(row)
    if not scores:
        raise SolverFailure(f"all {len(lambdas)} grid fits failed: {failures[0]['message']}")
    r2, lam, tau = _select(scores)
    best = results[lambdas.index(lam)][0]
    pred = predict_field_batch(best.model, tau, holdout.x)
    report = FitReport(
        r_squared=r2,
        residuals=pred - holdout.y,
        lam=lam,
        tau=tau,
        diagnostics={"grid": table, "failures": failures, "selected": _solution_diag(best)},
        timing={"fit_seconds": sum(r[2] for r in results), "total_seconds": time.perf_counter() - t0},
        metrics={"holdout_r2_estimates": r2, "n_train": train.n_s, "n_holdout": holdout.n_s},
        model=best.model,
    )
    return lam, tau, report


def _solution_diag(res) -> dict:
    sol = res.solution
    prim, dual, comp = kkt_residuals(res.problem, sol.z, sol.y)
    return {
        "status": sol.status.value,
        "objective": sol.objective,
        "primal_residual": prim,
        "dual_residual": dual,
        "comp_slackness": comp,
        "iterations": sol.iterations,
        "n_planes": res.layout.n_s,
    }


def _kfold(train, holdout, lambdas, taus, cfg, settings, jobs, k, seed, t0):
    pooled = Dataset(np.vstack([train.x, holdout.x]), np.vstack([train.y, holdout.y]))
    n = pooled.n_s
    if not 2 <= k <= n:
        raise DomainError(f"folds must lie in [2, {n}]")
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, k)
    sums = {}
    counts = {}
    failures = []
    for i, test_idx in enumerate(parts):
        train_idx = np.sort(np.concatenate([p for j, p in enumerate(parts) if j != i]))
        tr, te = pooled.subset(train_idx), pooled.subset(np.sort(test_idx))
        for lam, (res, diag, _) in zip(lambdas, _fit_grid(tr, cfg, lambdas, settings, jobs)):
            if res is None:
                failures.append(dict(diag, fold=i))
                continue
            for tau in taus:
                pred = predict_field_batch(res.model, tau, te.x)
                try:
                    r2 = r_squared(pred, te.y)
                except DegenerateTruth:
                    continue
                sums[(lam, tau)] = sums.get((lam, tau), 0.0) + r2
                counts[(lam, tau)] = counts.get((lam, tau), 0) + 1
    # only pairs that scored on every fold compete
    scores = [(sums[key] / k, *key) for key in sums if counts[key] == k]
    if not scores:
        raise SolverFailure("no grid point succeeded on every fold")
    r2, lam, tau = _select(scores)
    best = fit(pooled, replace(cfg, lam=lam), settings)
    pred = predict_field_batch(best.model, tau, pooled.x)
    report = FitReport(
        r_squared=r2,
        residuals=pred - pooled.y,
        lam=lam,
        tau=tau,
        diagnostics={"folds": k, "failures": failures, "selected": _solution_diag(best)},
        timing={"total_seconds": time.perf_counter() - t0},
        metrics={"cv_r2": r2, "n_pooled": n},
        model=best.model,
    )
    return lam, tau, report


SURFACE_HEADER = ["x1", "x2", "true1", "est1", "true2", "est2"]


def gradient_surface(spec, model, tau, domain, points: int = 41) -> np.ndarray:
    """Rows ``(x1, x2, dphi/dx1, estimate, dphi/dx2, estimate)`` on a square grid."""
    lo, hi = domain
    g = np.linspace(lo, hi, points)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    X = np.column_stack([X1.ravel(), X2.ravel()])
    true = potential_gradient(spec, X)
    est = -predict_field_batch(model, tau, X)
    return np.column_stack([X[:, 0], X[:, 1], true[:, 0], est[:, 0], true[:, 1], est[:, 1]])


def reproduce_paper_experiment(
    seed: int = 0,
    config: ExperimentConfig | None = None,
    out_dir=None,
    settings: SolverSettings | None = None,
    jobs: int = 1,
) -> FitReport:
    """Simulate, differentiate, split, cross-validate and score the quartic benchmark.

    The headline ``r_squared`` compares the prediction with the true field at
    the holdout states; the R^2 against the estimated derivatives, and over
    all samples, are kept in ``metrics``.
    """
    cfg = config or ExperimentConfig()
    t0 = time.perf_counter()
    data, clean, _ = generate_dataset(cfg, seed)
    train, holdout = split_dataset(data, cfg.train_fraction, seed)
    fcfg = FitConfig(cfg.variant)
    lam, tau, cv = cross_validate(train, holdout, cfg.lambda_grid, cfg.tau_grid, fcfg, settings, jobs)
    spec = cfg.field()
    model = cv.model
    pred_ho = predict_field_batch(model, tau, holdout.x)
    truth_ho = spec.field(holdout.x)
    pred_all = predict_field_batch(model, tau, data.x)
    truth_all = spec.field(data.x)
    surface = gradient_surface(spec, model, tau, cfg.domain)
    report = FitReport(
        r_squared=r_squared(pred_ho, truth_ho),
        residuals=pred_ho - truth_ho,
        lam=lam,
        tau=tau,
        diagnostics=cv.diagnostics,
        timing=dict(cv.timing, total_seconds=time.perf_counter() - t0),
        metrics={
            "holdout_r2_truth": r_squared(pred_ho, truth_ho),
            "holdout_r2_estimates": cv.r_squared,
            "all_r2_truth": r_squared(pred_all, truth_all),
            "derivative_r2": r_squared(data.y, truth_all),
            "n_samples": data.n_s,
            "n_train": train.n_s,
            "n_holdout": holdout.n_s,
            "n_trajectories": len(clean),
            "seed": seed,
            "surface_rmse": float(np.sqrt(np.mean((surface[:, [3, 5]] - surface[:, [2, 4]]) ** 2))),
        },
        model=model,
    )
    if out_dir is not None:
        write_report(report, out_dir, cfg, data, surface)
    return report


def write_report(report: FitReport, out_dir, cfg: ExperimentConfig, data: Dataset, surface) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "report": os.path.join(out_dir, "report.json"),
        "surface": os.path.join(out_dir, "surface.csv"),
        "dataset": os.path.join(out_dir, "dataset.csv"),
        "model": os.path.join(out_dir, "model.json"),
        "config": os.path.join(out_dir, "config.json"),
    }
    with open(paths["report"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json() + "\n")
    write_rows_csv(paths["surface"], SURFACE_HEADER, surface)
    write_dataset_csv(data, paths["dataset"])
    with open(paths["model"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(model_to_json(report.model) + "\n")
    with open(paths["config"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")
    return paths

