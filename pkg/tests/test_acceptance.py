"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python3 tests/test_acceptance.py``.  The benchmark criterion takes about a
minute and a half.
"""

import functools
import math
import os
import statistics
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import gradflow.evaluation as ev  # noqa: E402
from conftest import random_qp, symmetric_max_affine_data  # noqa: E402
from gradflow.builder import Dataset, FitConfig, Variant, fit  # noqa: E402
from gradflow.data import (  # noqa: E402
    ExperimentConfig,
    FieldSpec,
    Trajectory,
    estimate_derivatives,
    simulate_gradient_flow,
    simulate_protocol,
)
from gradflow.potential import (  # noqa: E402
    MaxAffinePotential,
    eval_max_affine,
    eval_smoothed,
    grad_smoothed,
    hessian_smoothed,
    predict_field_batch,
    tau_for_accuracy,
)
from gradflow.qp import Status, active_set_reference, solve_qp  # noqa: E402

KKT_TOL = 1e-8


def report(number, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}", flush=True)


def emit(capsys, number, ok, detail):
    if capsys is None:
        report(number, ok, detail)
    else:
        with capsys.disabled():
            print()
            report(number, ok, detail)
    assert ok, detail


def dense_kkt(res):
    """Residuals recomputed from dense copies of the problem data."""
    p = res.problem
    P, A = p.P.toarray(), p.A.toarray()
    z, y = np.asarray(res.solution.z), np.asarray(res.solution.y)
    slack = A @ z - p.b
    prim = max(0.0, slack.max()) if slack.size else 0.0
    dual = np.abs(P @ z + p.q + A.T @ y).max()
    comp = np.abs(y * slack).max() if slack.size else 0.0
    return prim, dual, comp, (y.min() if y.size else 0.0)


# ----------------------------------------------------------------------------
# suites shared between criteria

@functools.lru_cache(maxsize=None)
def benchmark_suite():
    fits = []
    real = ev.fit

    def recording(data, cfg, settings=None):
        out = real(data, cfg, settings)
        fits.append(out)
        return out

    ev.fit = recording
    t0 = time.perf_counter()
    try:
        cfg = ExperimentConfig()
        assert 1e-8 in cfg.lambda_grid and 0.16 in cfg.tau_grid
        r2 = [ev.reproduce_paper_experiment(seed, cfg).r_squared for seed in range(10)]
    finally:
        ev.fit = real
    return r2, time.perf_counter() - t0, fits


@functools.lru_cache(maxsize=None)
def recovery_suite():
    x, y, _ = symmetric_max_affine_data(np.random.default_rng(2024), 8, 5)
    t0 = time.perf_counter()
    res = fit(Dataset(x, y), FitConfig("convex", lam=1e-10))
    f = predict_field_batch(res.model, 1e-4, x)
    return res, float(np.max(np.abs(f - y))), time.perf_counter() - t0


# ----------------------------------------------------------------------------

def check_1():
    r2, secs, _ = benchmark_suite()
    good = sum(v >= 0.85 for v in r2)
    med = statistics.median(r2)
    ok = good >= 8 and med >= 0.88 and secs <= 300
    return ok, f"{good}/10 seeds with holdout R^2 >= 0.85, median {med:.4f}, min {min(r2):.4f}, {secs:.0f} s"


def check_2():
    res, err, secs = recovery_suite()
    ok = res.objective <= 1e-8 and err <= 1e-3 and secs <= 5
    return ok, f"objective {res.objective:.2e}, max field error {err:.2e} at tau=1e-4, {secs:.2f} s"


def check_3():
    rng = np.random.default_rng(99)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        d = int(rng.integers(2, 13))
        m = int(rng.integers(1, 21))
        problem = random_qp(rng, d, m)
        a = solve_qp(problem).objective
        b = active_set_reference(problem).objective
        worst = max(worst, abs(a - b) / (1 + abs(b)))
    secs = time.perf_counter() - t0
    return worst <= 1e-6 and secs <= 30, f"worst relative objective gap {worst:.2e} over 100 QPs, {secs:.1f} s"


def check_4():
    _, _, fits = benchmark_suite()
    res, _, _ = recovery_suite()
    solved = [f for f in fits + [res] if f.solution.status is Status.SOLVED]
    worst = np.zeros(3)
    min_y = 0.0
    for f in solved:
        prim, dual, comp, ymin = dense_kkt(f)
        worst = np.maximum(worst, [prim, dual, comp])
        min_y = min(min_y, ymin)
    ok = len(solved) == len(fits) + 1 and np.all(worst <= KKT_TOL) and min_y >= 0
    return ok, (
        f"{len(solved)} solved fits rechecked; worst primal {worst[0]:.1e}, dual {worst[1]:.1e}, "
        f"complementarity {worst[2]:.1e}"
    )


def check_5():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1.5, 1.5, (20, 2))
    y = -x + 0.4 * np.sin(2 * x[:, ::-1]) + 0.05 * rng.normal(size=x.shape)
    perm = rng.permutation(20)
    gaps = {}
    for variant in ("convex", "dc"):
        cfg = FitConfig(variant, lam=1e-4)
        a = fit(Dataset(x, y), cfg).model
        b = fit(Dataset(x[perm], y[perm]), cfg).model
        if variant == "dc":
            sa, sb = a.phi1.slopes - a.phi2.slopes, b.phi1.slopes - b.phi2.slopes
        else:
            sa, sb = a.slopes, b.slopes
        gaps[variant] = float(np.max(np.abs(sa[perm] - sb)))
    norms = [float(np.max(np.abs(fit(Dataset(x, y), FitConfig("convex", lam=lam)).model.heights)))
             for lam in (1e3, 1e6, 1e9)]
    scale = float(np.max(np.abs(y)))
    ok = max(gaps.values()) <= 1e-6 and norms[2] <= 1e-4 * scale and norms[0] > norms[1] > norms[2]
    return ok, (
        f"permuted xi gap convex {gaps['convex']:.1e}, dc {gaps['dc']:.1e}; "
        f"|theta|_inf at 1e3/1e6/1e9 = {norms[0]:.1e}/{norms[1]:.1e}/{norms[2]:.1e}"
    )


def check_6():
    rng = np.random.default_rng(6)
    n_s = 25
    m = MaxAffinePotential(rng.uniform(-1, 1, (n_s, 2)), rng.normal(size=n_s), rng.normal(size=(n_s, 2)))
    tau = 0.05
    slack_lo, slack_hi = np.inf, -np.inf
    for x in rng.uniform(-2, 2, (500, 2)):
        s = eval_max_affine(m, x) - eval_smoothed(m, tau, x)
        slack_lo, slack_hi = min(slack_lo, s), max(slack_hi, s)
    sandwich = slack_lo >= -1e-10 and slack_hi <= tau * math.log(n_s) + 1e-10

    grad_err = hess_err = 0.0
    h = 1e-6
    for x in rng.uniform(-1, 1, (20, 2)):
        fd = np.array([(eval_smoothed(m, tau, x + h * e) - eval_smoothed(m, tau, x - h * e)) / (2 * h) for e in np.eye(2)])
        grad_err = max(grad_err, np.max(np.abs(fd - grad_smoothed(m, tau, x))))
        fdh = np.column_stack([(grad_smoothed(m, tau, x + h * e) - grad_smoothed(m, tau, x - h * e)) / (2 * h)
                               for e in np.eye(2)])
        H = hessian_smoothed(m, tau, x)
        hess_err = max(hess_err, np.max(np.abs(fdh - H)) / (1 + np.max(np.abs(H))))
    derivs = grad_err <= 1e-6 and hess_err <= 1e-4

    eps = 0.05
    t = tau_for_accuracy(eps, n_s)
    g = np.linspace(-2, 2, 50)
    sup = max(eval_max_affine(m, [a, b]) - eval_smoothed(m, t, [a, b]) for a in g for b in g)
    tuned = sup <= eps
    ok = sandwich and derivs and tuned
    return ok, (
        f"slack in [{slack_lo:.1e}, {slack_hi:.3f}] vs bound {tau * math.log(n_s):.3f}; "
        f"gradient fd error {grad_err:.1e}, Hessian fd error {hess_err:.1e}; "
        f"sup gap {sup:.4f} <= eps {eps} at tau {t:.4f}"
    )


def check_7():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, (16, 2))
    y = -x + 0.05 * rng.normal(size=x.shape)
    x0 = np.array([0.05, -0.05])
    eq = fit(Dataset(x, y), FitConfig("equilibrium", lam=1e-6, x0=x0)).model
    eq_ok = eval_max_affine(eq, x0) == 0.0 and eq.heights.min() >= -1e-9

    mu = 0.5
    st = fit(Dataset(x, y), FitConfig("strongly-convex", lam=1e-6, mu=mu)).model
    th, xi = st.heights, st.slopes
    diff = x[None, :, :] - x[:, None, :]
    gap = th[None, :] - th[:, None] - np.einsum("ik,ijk->ij", xi, diff) - 0.5 * mu * np.sum(diff**2, axis=2)
    np.fill_diagonal(gap, 0.0)
    strong_ok = gap.min() >= -KKT_TOL

    # phi = -|x|^2 gives f = -grad(phi) = 2x
    yc = 2 * x
    cc = fit(Dataset(x, yc), FitConfig("concave", lam=1e-8)).model
    f = predict_field_batch(cc, 1e-6, x)
    rel = np.linalg.norm(f - yc, axis=1) / np.linalg.norm(yc, axis=1)
    concave_ok = cc.sign == -1 and rel.max() <= 0.05
    ok = eq_ok and strong_ok and concave_ok
    return ok, (
        f"equilibrium phi(x0)={eval_max_affine(eq, x0)}, min theta {eq.heights.min():.1e}; "
        f"strong margin {gap.min():.1e}; concave worst relative field error {rel.max():.1e}"
    )


def check_8():
    t = np.linspace(0, 2, 21)
    x = 0.5 - 1.5 * t + 0.75 * t**2 - 0.25 * t**3
    est = estimate_derivatives(Trajectory(t, x), window=7, degree=3)
    poly_err = max(abs(e.y[0] - (-1.5 + 1.5 * tk - 0.75 * tk**2)) for e, tk in zip(est, t))

    spec = FieldSpec(lambda v: -v, 1)
    errs = [abs(simulate_gradient_flow(spec, [1.0], [0.0, 1.0], h_max=h).states[-1, 0] - math.exp(-1))
            for h in (0.1, 0.05)]
    order = math.log2(errs[0] / errs[1])

    cfg = ExperimentConfig()
    phi = cfg.field().potential
    worst = -np.inf
    count = 0
    for seed in range(10):
        for tr in simulate_protocol(cfg, seed):
            worst = max(worst, np.diff(phi(tr.states)).max())
            count += 1
    ok = poly_err <= 1e-10 and 3.8 <= order <= 4.2 and worst <= 0
    return ok, (
        f"cubic derivative error {poly_err:.1e}; observed RK4 order {order:.2f}; "
        f"largest energy increment {worst:.1e} over {count} trajectories"
    )


CHECKS = {1: check_1, 2: check_2, 3: check_3, 4: check_4, 5: check_5, 6: check_6, 7: check_7, 8: check_8}


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CHECKS))
def test_criterion(number, capsys):
    ok, detail = CHECKS[number]()
    emit(capsys, number, ok, detail)


if __name__ == "__main__":
    failed = 0
    for number, check in sorted(CHECKS.items()):
        ok, detail = check()
        report(number, ok, detail)
        failed += not ok
    sys.exit(1 if failed else 0)
