"""Convex quadratic programs ``min 1/2 z'Pz + q'z  s.t.  Az <= b``.

The production path is an operator-splitting (ADMM) iteration in the style of
OSQP: Ruiz equilibration, over-relaxation, adaptive scalar penalty, and a
polishing step that guesses the active set from the ADMM iterate and refines it
by solving the equality-constrained KKT system.  When ADMM has not certified
within its budget, a primal-dual interior-point method (Mehrotra
predictor-corrector on the same scaled data) finishes the job; ADMM converges
too slowly in the nearly flat directions left by tiny regularisation weights.
Termination is always decided
on the unscaled KKT residuals, so a ``SOLVED`` status is a checkable
certificate.

``active_set_reference`` enumerates active sets exhaustively and is only meant
as a test oracle for small problems.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import DimensionMismatch, Infeasible, SizeExceeded

MIN_SCALING = 1e-4
MAX_SCALING = 1e4
RHO_MIN = 1e-6
RHO_MAX = 1e6


class Status(str, enum.Enum):
    SOLVED = "Solved"
    MAX_ITERS = "MaxIters"
    NUMERICAL_FAILURE = "NumericalFailure"


def _as_sparse(M, shape=None, fmt="csc"):
    if sp.issparse(M):
        out = M.asformat(fmt).astype(float)
    else:
        arr = np.asarray(M, dtype=float)
        if shape is not None and arr.size == 0:
            arr = arr.reshape(shape)
        out = sp.csc_matrix(arr) if fmt == "csc" else sp.csr_matrix(arr)
    out = out.copy()
    out.sum_duplicates()
    out.eliminate_zeros()
    return out


@dataclass(frozen=True)
class QpProblem:
    """Problem data.  ``constant`` is added to the reported objective only."""

    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    names: tuple | None = None
    constant: float = 0.0

    def __post_init__(self):
        q = np.array(self.q, dtype=float).ravel()
        d = q.size
        b = np.array(self.b, dtype=float).ravel()
        m = b.size
        P = _as_sparse(self.P, (d, d), "csc")
        A = _as_sparse(self.A, (m, d), "csr")
        if P.shape != (d, d):
            raise DimensionMismatch(f"P has shape {P.shape}, expected {(d, d)}")
        if A.shape != (m, d):
            raise DimensionMismatch(f"A has shape {A.shape}, expected {(m, d)}")
        for label, arr in (("P", P.data), ("q", q), ("A", A.data), ("b", b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{label} contains non-finite entries")
        if not math.isfinite(self.constant):
            raise ValueError("constant must be finite")
        scale = max(1.0, abs(P).max()) if P.nnz else 1.0
        asym = abs(P - P.T).max() if P.nnz else 0.0
        if asym > 1e-12 * scale:
            raise ValueError(f"P is not symmetric (max asymmetry {asym:.3e})")
        if m and np.any(A.getnnz(axis=1) == 0):
            raise ValueError("every row of A needs at least one nonzero entry")
        if self.names is not None and len(self.names) != d:
            raise DimensionMismatch("names must have one label per variable")
        q.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def d(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.b.size

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ (self.P @ z) + self.q @ z + self.constant)

    def to_json(self) -> str:
        """Debug dump with coordinate-list ``P``/``A`` and dense ``q``/``b``."""
        Pc = self.P.tocoo()
        Ac = self.A.tocoo()
        doc = {
            "d": self.d,
            "m": self.m,
            "P": [[int(i), int(j), float(v)] for i, j, v in zip(Pc.row, Pc.col, Pc.data)],
            "q": [float(v) for v in self.q],
            "A": [[int(i), int(j), float(v)] for i, j, v in zip(Ac.row, Ac.col, Ac.data)],
            "b": [float(v) for v in self.b],
        }
        if self.constant:
            doc["constant"] = float(self.constant)
        if self.names is not None:
            doc["names"] = list(self.names)
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "QpProblem":
        doc = json.loads(text)
        d, m = int(doc["d"]), int(doc["m"])

        def coo(entries, shape):
            if not entries:
                return sp.csc_matrix(shape)
            arr = np.asarray(entries, dtype=float)
            return sp.coo_matrix((arr[:, 2], (arr[:, 0].astype(int), arr[:, 1].astype(int))), shape=shape)

        return cls(
            P=coo(doc["P"], (d, d)),
            q=np.asarray(doc["q"], dtype=float),
            A=coo(doc["A"], (m, d)),
            b=np.asarray(doc["b"], dtype=float),
            names=doc.get("names"),
            constant=float(doc.get("constant", 0.0)),
        )


@dataclass(frozen=True)
class SolverSettings:
    eps_prim: float = 1e-8
    eps_dual: float = 1e-8
    eps_comp: float = 1e-8
    # optional bound on the summed complementarity relative to 1 + |objective|;
    # off by default since per-row comp already certifies a KKT point
    eps_gap: float | None = None
    max_iters: int = 200_000
    penalty_init: float = 0.1
    penalty_adapt: bool = True
    scaling_iters: int = 10
    sigma: float = 1e-6
    alpha: float = 1.6
    check_interval: int = 25
    polish: bool = True
    polish_rounds: int = 8
    method: str = "auto"
    admm_iters: int = 200
    ipm_iters: int = 200

    def __post_init__(self):
        for name in ("eps_prim", "eps_dual", "eps_comp", "penalty_init", "sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.eps_gap is not None and not self.eps_gap > 0:
            raise ValueError("eps_gap must be strictly positive or None")
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if self.method not in ("auto", "admm", "ipm"):
            raise ValueError("method must be 'auto', 'admm' or 'ipm'")
        if self.max_iters < 1 or self.check_interval < 1:
            raise ValueError("max_iters and check_interval must be positive")


@dataclass(frozen=True)
class QpSolution:
    z: np.ndarray
    y: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    comp_slackness: float
    iterations: int
    status: Status
    polished: bool = False
    info: dict = field(default_factory=dict, compare=False)

    @property
    def solved(self) -> bool:
        return self.status is Status.SOLVED


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def kkt_residuals(problem: QpProblem, z, y) -> tuple[float, float, float]:
    """Return ``(primal, dual, comp)`` residuals of a primal/dual pair.

    primal is ``max(0, max(Az - b))``, dual is ``||Pz + q + A'y||_inf`` and comp
    is ``max |y_i (Az - b)_i|``.
    """
    z = np.asarray(z, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if z.size != problem.d or y.size != problem.m:
        raise DimensionMismatch(
            f"expected z of size {problem.d} and y of size {problem.m}, got {z.size} and {y.size}"
        )
    slack = problem.A @ z - problem.b
    primal = max(0.0, float(slack.max())) if slack.size else 0.0
    dual = _inf_norm(problem.P @ z + problem.q + problem.A.T @ y)
    comp = _inf_norm(y * slack)
    return primal, dual, comp


def _equilibrate(P, q, A, iters):
    """Modified Ruiz equilibration of the KKT matrix plus cost scaling."""
    d, m = P.shape[0], A.shape[0]
    D = np.ones(d)
    E = np.ones(m)
    c = 1.0
    Ps, qs, As = P.copy(), q.copy(), A.copy()

    def limit(v):
        v = v.copy()
        v[v < MIN_SCALING] = 1.0
        return np.minimum(v, MAX_SCALING)

    for _ in range(iters):
        col = abs(Ps).max(axis=0).toarray().ravel() if Ps.nnz else np.zeros(d)
        if m:
            col = np.maximum(col, abs(As).max(axis=0).toarray().ravel())
            row = abs(As).max(axis=1).toarray().ravel()
        else:
            row = np.zeros(0)
        dd = 1.0 / np.sqrt(limit(col))
        ee = 1.0 / np.sqrt(limit(row))
        Dm = sp.diags(dd)
        Ps = (Dm @ Ps @ Dm).tocsc()
        As = (sp.diags(ee) @ As @ Dm).tocsr()
        qs = dd * qs
        D *= dd
        E *= ee
        pcol = abs(Ps).max(axis=0).toarray().ravel() if Ps.nnz else np.zeros(d)
        gamma_den = max(float(np.mean(pcol)) if d else 0.0, _inf_norm(qs))
        gamma = 1.0 / min(max(gamma_den, MIN_SCALING), MAX_SCALING) if gamma_den > MIN_SCALING else 1.0
        Ps = Ps * gamma
        qs = qs * gamma
        c *= gamma
    return Ps.tocsc(), qs, As.tocsr(), D, E, c


class _Workspace:
    """Scaled problem data and the ADMM iterate."""

    def __init__(self, problem: QpProblem, settings: SolverSettings):
        self.problem = problem
        self.settings = settings
        iters = settings.scaling_iters
        self.Ps, self.qs, self.As, self.D, self.E, self.c = _equilibrate(
            problem.P, problem.q, problem.A, iters
        )
        self.bs = self.E * problem.b
        self.AtA = (self.As.T @ self.As).toarray() if problem.m else np.zeros((problem.d, problem.d))
        self.Pd = self.Ps.toarray()
        d, m = problem.d, problem.m
        self.x = np.zeros(d)
        self.zc = np.minimum(np.zeros(m), self.bs)
        self.y = np.zeros(m)
        self.rho = settings.penalty_init
        self.factor = None
        self.n_factor = 0

    def factorize(self):
        d = self.problem.d
        K = self.Pd + self.settings.sigma * np.eye(d) + self.rho * self.AtA
        self.factor = la.cho_factor(K, lower=True, check_finite=True)
        self.n_factor += 1

    def step(self):
        s = self.settings
        rhs = s.sigma * self.x - self.qs + self.As.T @ (self.rho * self.zc - self.y)
        xt = la.cho_solve(self.factor, rhs, check_finite=False)
        zt = self.As @ xt
        self.x = s.alpha * xt + (1.0 - s.alpha) * self.x
        zr = s.alpha * zt + (1.0 - s.alpha) * self.zc
        znew = np.minimum(zr + self.y / self.rho, self.bs)
        self.y = self.y + self.rho * (zr - znew)
        self.zc = znew

    def unscaled(self, x=None, y=None):
        x = self.x if x is None else x
        y = self.y if y is None else y
        return self.D * x, self.E * y / self.c

    def adapt_rho(self) -> bool:
        Ax = self.As @ self.x
        Px = self.Ps @ self.x
        Aty = self.As.T @ self.y
        prim = _inf_norm(Ax - self.zc)
        dual = _inf_norm(Px + self.qs + Aty)
        prim_n = max(_inf_norm(Ax), _inf_norm(self.zc), 1e-30)
        dual_n = max(_inf_norm(Px), _inf_norm(Aty), _inf_norm(self.qs), 1e-30)
        if dual < 1e-30 or prim < 1e-30:
            return False
        ratio = math.sqrt((prim / prim_n) / (dual / dual_n))
        new = min(max(self.rho * ratio, RHO_MIN), RHO_MAX)
        if new > 5.0 * self.rho or new < 0.2 * self.rho:
            self.rho = new
            self.factorize()
            return True
        return False

    def polish(self):
        """Active-set refinement seeded by the current ADMM iterate.

        Solves the equality-constrained KKT system on the guessed active set,
        then adds violated rows and drops rows with negative multipliers for a
        few rounds.  Returns unscaled ``(z, y)`` or ``None``.
        """
        s = self.settings
        m = self.problem.m
        act = self.y > (self.bs - self.zc)
        tol_r = 1e-3 * s.eps_prim * (1.0 + _inf_norm(self.bs))
        seen = set()
        cand = None
        for _ in range(max(1, s.polish_rounds)):
            key = np.packbits(act).tobytes()
            if key in seen:
                break
            seen.add(key)
            idx = np.flatnonzero(act)
            sol = _solve_equality_kkt(self.Ps, self.Pd, self.qs, self.As[idx], self.bs[idx])
            if sol is None:
                break
            x, ya = sol
            y = np.zeros(m)
            y[idx] = np.maximum(ya, 0.0)
            cand = (x, y)
            viol = (self.As @ x - self.bs) > tol_r
            neg = np.zeros(m, dtype=bool)
            neg[idx] = ya < 0
            if not viol.any() and not neg.any():
                break
            act = (act | viol) & ~neg
        if cand is None:
            return None
        return self.unscaled(*cand)


def _solve_equality_kkt(P, Pd, q, Aa, ba, delta=1e-7, refine=50):
    """Solve ``[[P, Aa'], [Aa, 0]] [x; y] = [-q; ba]``.

    The quasi-definite regularisation ``[[P + delta I, Aa'], [Aa, -delta I]]``
    is factored through its ``d x d`` Schur complement and iterative
    refinement removes the regularisation error.  ``None`` on breakdown.
    """
    d = P.shape[0]
    k = Aa.shape[0]
    Ad = Aa.toarray() if k else np.zeros((0, d))
    S = Pd + delta * np.eye(d) + (Ad.T @ Ad) / delta
    try:
        fac = la.cho_factor(S, lower=True)
    except (la.LinAlgError, ValueError):
        return None

    def solve_reg(r1, r2):
        x = la.cho_solve(fac, r1 + Aa.T @ r2 / delta, check_finite=False)
        return x, (Aa @ x - r2) / delta

    x, y = solve_reg(-q, ba)
    scale = max(1.0, _inf_norm(q), _inf_norm(ba))
    for _ in range(refine):
        r1 = -q - (P @ x + Aa.T @ y)
        r2 = ba - Aa @ x
        if max(_inf_norm(r1), _inf_norm(r2)) <= 1e-14 * scale:
            break
        dx, dy = solve_reg(r1, r2)
        x = x + dx
        y = y + dy
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        return None
    return x, y


def _looks_psd(P) -> bool:
    d = P.shape[0]
    if d == 0:
        return True
    Pd = P.toarray()
    shift = 1e-9 * max(1.0, float(np.max(np.abs(np.diag(Pd)))))
    try:
        np.linalg.cholesky(Pd + shift * np.eye(d))
    except np.linalg.LinAlgError:
        return False
    return True


def _finish(problem, z, y, iters, status, polished, info, settings):
    prim, dual, comp = kkt_residuals(problem, z, y)
    if status is Status.SOLVED and _score(problem, z, y, settings) > 1.0:
        status = Status.MAX_ITERS
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
        status = Status.NUMERICAL_FAILURE
    z = np.array(z, dtype=float)
    y = np.array(y, dtype=float)
    z.setflags(write=False)
    y.setflags(write=False)
    obj = problem.objective(z) if np.all(np.isfinite(z)) else float("nan")
    info["duality_gap"] = duality_gap(problem, z, y)
    return QpSolution(
        z=z,
        y=y,
        objective=obj,
        primal_residual=prim,
        dual_residual=dual,
        comp_slackness=comp,
        iterations=iters,
        status=status,
        polished=polished,
        info=info,
    )


def duality_gap(problem: QpProblem, z, y) -> float:
    """``sum_i |y_i (b - Az)_i|``; equals the primal-dual gap at a feasible pair."""
    if problem.m == 0:
        return 0.0
    return float(np.abs(np.asarray(y) * (problem.b - problem.A @ np.asarray(z))).sum())


def _score(problem, z, y, settings) -> float:
    """Worst ratio of a residual to its tolerance; at most 1 means certified."""
    prim, dual, comp = kkt_residuals(problem, z, y)
    score = max(prim / settings.eps_prim, dual / settings.eps_dual, comp / settings.eps_comp)
    if settings.eps_gap is not None:
        gap = duality_gap(problem, z, y) / (1.0 + abs(problem.objective(z)))
        score = max(score, gap / settings.eps_gap)
    return score


def _step_length(v, dv) -> float:
    neg = dv < 0
    return min(1.0, float(np.min(-v[neg] / dv[neg]))) if neg.any() else 1.0


def _interior_point(ws: _Workspace, budget: int, settings: SolverSettings):
    """Mehrotra predictor-corrector on the scaled data in ``ws``.

    Newton systems eliminate the slacks and the multipliers of rows with
    moderate ``y/s``; rows with very large ``y/s`` (the emerging active set)
    are kept as a quasi-definite block, which stays well conditioned as the
    barrier parameter vanishes.  Returns
    ``(z, y, iterations, certified)`` with ``z, y`` unscaled.
    """
    problem = ws.problem
    P, q, A, b = ws.Ps, ws.qs, ws.As, ws.bs
    d, m = problem.d, problem.m
    At = A.T.tocsr()
    x = np.zeros(d)
    s = np.maximum(b - A @ x, 1.0)
    y = np.ones(m)
    best, best_score = None, math.inf
    for it in range(budget):
        z_u, y_u = ws.unscaled(x, np.maximum(y, 0.0))
        score = _score(problem, z_u, y_u, settings)
        if score < best_score:
            best, best_score = (z_u, y_u), score
        if score <= 1.0:
            return z_u, y_u, it, True
        rd = P @ x + q + At @ y
        rp = A @ x + s - b
        mu = float(s @ y) / max(m, 1)
        w = y / s
        # rows with huge y/s stay explicit; eliminating them ruins conditioning
        big = np.flatnonzero(w > 1e4)
        if big.size > 3 * d:
            big = big[np.argsort(-w[big])[: 3 * d]]
        keep = np.zeros(m, dtype=bool)
        keep[big] = True
        Sx, Nx = np.flatnonzero(keep), np.flatnonzero(~keep)
        AS, AN = A[Sx], A[Nx]
        H = ws.Pd + (AN.T @ sp.diags(w[Nx]) @ AN).toarray()
        H[np.diag_indices(d)] += 1e-14 * max(1.0, float(np.abs(H).max()))
        ASd = AS.toarray()
        K = np.block([[H, ASd.T], [ASd, -np.diag(1.0 / w[Sx])]])
        try:
            lu = la.lu_factor(K, check_finite=True)
        except (la.LinAlgError, ValueError):
            break

        def direction(rc):
            # P dx + A'dy = -rd,  A dx - dy/w = -rp + rc/y
            r2 = -rp + rc / y
            rhs = np.concatenate([-rd + AN.T @ (w[Nx] * r2[Nx]), r2[Sx]])
            sol = la.lu_solve(lu, rhs, check_finite=False)
            for _ in range(3):
                dx, dyS = sol[:d], sol[d:]
                dy = np.empty(m)
                dy[Sx] = dyS
                dy[Nx] = w[Nx] * (AN @ dx - r2[Nx])
                e = np.concatenate([-rd - (P @ dx + At @ dy), r2[Sx] - (AS @ dx - dyS / w[Sx])])
                sol = sol + la.lu_solve(lu, e, check_finite=False)
            dx = sol[:d]
            dy = np.empty(m)
            dy[Sx] = sol[d:]
            dy[Nx] = w[Nx] * (AN @ dx - r2[Nx])
            return dx, -rp - A @ dx, dy

        dx, ds, dy = direction(s * y)
        ap, ad = _step_length(s, ds), _step_length(y, dy)
        mu_aff = float((s + ap * ds) @ (y + ad * dy)) / max(m, 1)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, ds, dy = direction(s * y + ds * dy - sigma * mu)
        a = min(1.0, 0.995 * _step_length(s, ds), 0.995 * _step_length(y, dy))
        x, s, y = x + a * dx, s + a * ds, y + a * dy
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))) or a < 1e-12:
            break
    else:
        it = budget
    z_u, y_u = best
    return z_u, y_u, it + 1, False


def solve_qp(problem: QpProblem, settings: SolverSettings | None = None) -> QpSolution:
    """Solve ``problem`` and report KKT residuals measured on the unscaled data.

    The status is ``SOLVED`` only if all three residuals (and the duality gap,
    when ``eps_gap`` is set) are within the tolerances of ``settings``; otherwise ``MAX_ITERS`` (budget exhausted, best
    iterate returned) or ``NUMERICAL_FAILURE``.
    """
    settings = settings or SolverSettings()
    d, m = problem.d, problem.m
    info = {"rho_updates": 0, "polish_attempts": 0}
    if not _looks_psd(problem.P):
        return _finish(problem, np.full(d, np.nan), np.full(m, np.nan), 0,
                       Status.NUMERICAL_FAILURE, False, info, settings)

    ws = _Workspace(problem, settings)
    try:
        ws.factorize()
    except (la.LinAlgError, ValueError):
        return _finish(problem, np.full(d, np.nan), np.full(m, np.nan), 0,
                       Status.NUMERICAL_FAILURE, False, info, settings)

    admm_budget = settings.max_iters
    if settings.method == "auto":
        admm_budget = min(settings.admm_iters, settings.max_iters)
    elif settings.method == "ipm":
        admm_budget = 0
    next_polish = settings.check_interval
    best = None
    best_score = math.inf
    k = 0
    while k < admm_budget:
        ws.step()
        k += 1
        if k % settings.check_interval and k != admm_budget:
            continue
        if not (np.all(np.isfinite(ws.x)) and np.all(np.isfinite(ws.y))):
            return _finish(problem, ws.D * ws.x, ws.E * ws.y / ws.c, k,
                           Status.NUMERICAL_FAILURE, False, info, settings)
        z, y = ws.unscaled()
        score = _score(problem, z, y, settings)
        if score < best_score:
            best, best_score = (z, y, False), score
        if score <= 1.0:
            return _finish(problem, z, y, k, Status.SOLVED, False, info, settings)
        if settings.polish and k >= next_polish:
            info["polish_attempts"] += 1
            next_polish = 2 * k
            pol = ws.polish()
            if pol is not None:
                pscore = _score(problem, *pol, settings)
                if pscore <= 1.0:
                    return _finish(problem, pol[0], pol[1], k, Status.SOLVED, True, info, settings)
                if pscore < best_score:
                    best, best_score = (pol[0], pol[1], True), pscore
        if settings.penalty_adapt:
            try:
                if ws.adapt_rho():
                    info["rho_updates"] += 1
            except (la.LinAlgError, ValueError):
                return _finish(problem, ws.D * ws.x, ws.E * ws.y / ws.c, k,
                               Status.NUMERICAL_FAILURE, False, info, settings)

    if settings.method != "admm" and k < settings.max_iters:
        budget = min(settings.ipm_iters, settings.max_iters - k)
        z, y, n_ipm, ok = _interior_point(ws, budget, settings)
        info["ipm_iterations"] = n_ipm
        k += n_ipm
        if ok:
            return _finish(problem, z, y, k, Status.SOLVED, False, info, settings)
        score = _score(problem, z, y, settings)
        if score < best_score:
            best, best_score = (z, y, False), score

    z, y, polished = best if best is not None else (*ws.unscaled(), False)
    return _finish(problem, z, y, k, Status.MAX_ITERS, polished, info, settings)


def active_set_reference(problem: QpProblem, max_d: int = 12, max_m: int = 20) -> QpSolution:
    """Globally optimal solution by exhaustive active-set enumeration.

    Active sets are visited by increasing size.  Each candidate's
    equality-constrained stationary point is kept if primal feasible; the first
    candidate that also has nonnegative multipliers is a KKT point and is
    returned immediately.  If no candidate certifies, the feasible candidate
    with the lowest objective is returned.  Exponential cost: test use only.
    """
    d, m = problem.d, problem.m
    if d > max_d or m > max_m:
        raise SizeExceeded(f"active-set enumeration limited to d <= {max_d}, m <= {max_m}; got d={d}, m={m}")
    P = problem.P.toarray()
    q = np.asarray(problem.q)
    A = problem.A.toarray()
    b = np.asarray(problem.b)
    scale = 1.0 + max(_inf_norm(b), _inf_norm(q), _inf_norm(P), _inf_norm(A))
    tol = 1e-9 * scale
    try:
        Pinv = np.linalg.inv(P)
        definite = np.all(np.linalg.eigvalsh(P) > 1e-10 * scale)
    except np.linalg.LinAlgError:
        definite = False
    if definite:
        # Schur complement form: z = z0 - P^-1 A_S' y_S with G_SS y_S = h_S
        z0 = -Pinv @ q
        PiAt = Pinv @ A.T
        G = A @ PiAt
        h = A @ z0 - b

    best = None
    visited = 0
    for size in range(0, min(m, d) + 1):
        for S in itertools.combinations(range(m), size):
            visited += 1
            S = list(S)
            if definite:
                if size:
                    Gs = G[np.ix_(S, S)]
                    try:
                        ys = np.linalg.solve(Gs, h[S])
                    except np.linalg.LinAlgError:
                        continue
                    if _inf_norm(Gs @ ys - h[S]) > 1e-9 * scale * (1.0 + _inf_norm(ys)):
                        continue
                    # a KKT point exists when P is definite, so skip the fallback bookkeeping
                    if np.any(ys < -tol) or np.any(h - G[:, S] @ ys > tol):
                        continue
                    z = z0 - PiAt[:, S] @ ys
                else:
                    ys = np.zeros(0)
                    z = z0
            else:
                As = A[S]
                K = np.block([[P, As.T], [As, np.zeros((size, size))]]) if size else P
                rhs = np.concatenate([-q, b[S]])
                sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
                if _inf_norm(K @ sol - rhs) > 1e-8 * scale:
                    continue
                z, ys = sol[:d], sol[d:]
            if np.any(A @ z - b > tol):
                continue
            y = np.zeros(m)
            y[S] = ys
            obj = problem.objective(z)
            if np.all(ys >= -tol):
                y = np.maximum(y, 0.0)
                prim, dual, comp = kkt_residuals(problem, z, y)
                return QpSolution(z, y, obj, prim, dual, comp, visited, Status.SOLVED, False,
                                  {"active_set": tuple(S)})
            if best is None or obj < best[2]:
                best = (z, y, obj, S)
    if best is None:
        raise Infeasible("no active set yields a feasible point")
    z, y, obj, S = best
    y = np.maximum(y, 0.0)
    prim, dual, comp = kkt_residuals(problem, z, y)
    return QpSolution(z, y, obj, prim, dual, comp, visited, Status.SOLVED, False,
                      {"active_set": tuple(S), "certified": False})
