"""Assemble the fitting quadratic programs and read models back out of them.

Convex-type fits use ``z = [theta (n_s), xi (n_s*n)]`` and one inequality per
ordered sample pair ``i != j``::

    theta_i - theta_j + <xi_i, x_j - x_i> <= -mu/2 |x_i - x_j|^2

DC fits stack two such blocks, ``z = [theta1, theta2, xi1, xi2, alpha]``, with
the pairwise constraints imposed on each piece independently.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import BasisEvaluationError, DimensionMismatch, LayoutMismatch, VariantMismatch
from .potential import DcPotential, MaxAffinePotential
from .qp import QpProblem, QpSolution, SolverSettings, Status, solve_qp


class Variant(str, enum.Enum):
    CONVEX = "convex"
    CONCAVE = "concave"
    STRONGLY_CONVEX = "strongly-convex"
    STRONGLY_CONCAVE = "strongly-concave"
    EQUILIBRIUM = "equilibrium"
    DC = "dc"
    DC_PARAMETRIC = "dc-parametric"

    @property
    def is_dc(self) -> bool:
        return self in (Variant.DC, Variant.DC_PARAMETRIC)

    @property
    def is_concave(self) -> bool:
        return self in (Variant.CONCAVE, Variant.STRONGLY_CONCAVE)

    @property
    def is_strong(self) -> bool:
        return self in (Variant.STRONGLY_CONVEX, Variant.STRONGLY_CONCAVE)


@dataclass(frozen=True)
class Dataset:
    """Samples ``(x_j, y_j)``: states and estimated time derivatives, row-wise."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or x.shape != y.shape:
            raise DimensionMismatch(f"x and y must have equal (n_s, n) shapes, got {x.shape} and {y.shape}")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise DimensionMismatch("a dataset needs at least one sample of dimension >= 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def n_s(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class FitConfig:
    variant: Variant = Variant.DC
    lam: float = 1e-8
    mu: float | None = None
    x0: np.ndarray | None = None
    basis: str | None = None
    tikhonov: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if self.variant.is_strong:
            if self.mu is None or not self.mu > 0:
                raise ValueError("strong variants need mu > 0")
        if self.variant is Variant.EQUILIBRIUM:
            if self.x0 is None:
                raise ValueError("the equilibrium variant needs x0")
            object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())
        if self.variant is Variant.DC_PARAMETRIC:
            if self.basis is None:
                raise ValueError("the dc-parametric variant needs a basis name")
            from .potential import get_basis

            get_basis(self.basis)


@dataclass(frozen=True)
class VariableLayout:
    """Index ranges of each variable block inside ``z``."""

    blocks: dict
    d: int
    variant: Variant
    n_s: int
    n: int
    p: int = 0

    def __post_init__(self):
        covered = sorted(self.blocks.values())
        pos = 0
        for start, stop in covered:
            if start != pos or stop < start:
                raise LayoutMismatch("blocks must be disjoint and cover 0..d")
            pos = stop
        if pos != self.d:
            raise LayoutMismatch("blocks must be disjoint and cover 0..d")

    def slice(self, name) -> slice:
        start, stop = self.blocks[name]
        return slice(start, stop)


def _pair_indices(n_s):
    i, j = np.nonzero(~np.eye(n_s, dtype=bool))
    return i, j


def _cone_rows(x, theta_off, xi_off, n_vars, mu=0.0):
    """Pairwise convexity rows for one (theta, xi) block, in ``A z <= b`` form."""
    n_s, n = x.shape
    i, j = _pair_indices(n_s)
    m = i.size
    rows = np.arange(m)
    diff = x[j] - x[i]
    r = np.concatenate([rows, rows, np.repeat(rows, n)])
    c = np.concatenate([theta_off + i, theta_off + j, (xi_off + i[:, None] * n + np.arange(n)).ravel()])
    v = np.concatenate([np.ones(m), -np.ones(m), diff.ravel()])
    A = sp.csr_matrix((v, (r, c)), shape=(m, n_vars))
    b = -0.5 * mu * np.sum(diff**2, axis=1) if mu else np.zeros(m)
    # rows between duplicated points would otherwise carry explicit zeros
    A.eliminate_zeros()
    return A, b


def _names(n_s, n, prefix=""):
    th = [f"theta{prefix}[{i}]" for i in range(n_s)]
    xi = [f"xi{prefix}[{i},{k}]" for i in range(n_s) for k in range(n)]
    return th, xi


def build_convex_fit(data: Dataset, cfg: FitConfig):
    """QP for the convex, concave, strong and equilibrium variants."""
    if cfg.variant.is_dc:
        raise VariantMismatch(f"build_convex_fit does not handle {cfg.variant.value}")
    n_s, n = data.n_s, data.n
    d = n_s + n_s * n
    layout = VariableLayout({"theta": (0, n_s), "xi": (n_s, d)}, d, cfg.variant, n_s, n)
    lam = cfg.lam
    xi_curv = 2.0 * (1.0 + lam) if cfg.tikhonov else 2.0
    P = sp.diags(np.concatenate([np.full(n_s, 2.0 * lam), np.full(n_s * n, xi_curv)])).tocsc()
    ysign = -2.0 if cfg.variant.is_concave else 2.0
    q = np.concatenate([np.zeros(n_s), ysign * data.y.ravel()])
    constant = float(np.sum(data.y**2))

    mu = cfg.mu if cfg.variant.is_strong else 0.0
    A, b = _cone_rows(data.x, 0, n_s, d, mu)
    if cfg.variant is Variant.EQUILIBRIUM:
        x0 = cfg.x0
        if x0.size != n:
            raise DimensionMismatch(f"x0 has dimension {x0.size}, data has {n}")
        idx = np.arange(n_s)
        # theta_j >= <0, x_j - x0> = 0
        A0 = sp.csr_matrix((-np.ones(n_s), (idx, idx)), shape=(n_s, d))
        # -theta_i >= <xi_i, x0 - x_i>
        diff = x0[None, :] - data.x
        r = np.concatenate([idx, np.repeat(idx, n)])
        c = np.concatenate([idx, (n_s + idx[:, None] * n + np.arange(n)).ravel()])
        v = np.concatenate([np.ones(n_s), diff.ravel()])
        A1 = sp.csr_matrix((v, (r, c)), shape=(n_s, d))
        A = sp.vstack([A, A0, A1]).tocsr()
        b = np.concatenate([b, np.zeros(2 * n_s)])
    th, xi = _names(n_s, n)
    return QpProblem(P=P, q=q, A=A, b=b, names=th + xi, constant=constant), layout


def evaluate_basis(basis: Sequence[Callable], x: np.ndarray) -> np.ndarray:
    """Stack ``h_k(x_i)`` into an ``(n_s*n, p)`` matrix, checking finiteness."""
    n_s, n = x.shape
    H = np.empty((n_s * n, len(basis)))
    for k, h in enumerate(basis):
        vals = np.asarray([np.asarray(h(xi), dtype=float).ravel() for xi in x])
        if vals.shape != (n_s, n):
            raise BasisEvaluationError(f"basis field {k} returned shape {vals.shape[1:]} instead of ({n},)")
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(vals), axis=1))[0])
            raise BasisEvaluationError(f"basis field {k} is not finite at sample {bad}")
        H[:, k] = vals.ravel()
    return H


def build_dc_fit(data: Dataset, cfg: FitConfig):
    """QP for the difference-of-convex fit, optionally with a parametric part.

    ``lam == 0`` is accepted but leaves the problem without a unique solution;
    the layout is returned either way and the extracted model is flagged.
    """
    if not cfg.variant.is_dc:
        raise VariantMismatch(f"build_dc_fit does not handle {cfg.variant.value}")
    from .potential import get_basis

    n_s, n = data.n_s, data.n
    N = n_s * n
    basis = get_basis(cfg.basis, n) if cfg.variant is Variant.DC_PARAMETRIC else []
    p = len(basis)
    d = 2 * n_s + 2 * N + p
    blocks = {
        "theta1": (0, n_s),
        "theta2": (n_s, 2 * n_s),
        "xi1": (2 * n_s, 2 * n_s + N),
        "xi2": (2 * n_s + N, 2 * n_s + 2 * N),
    }
    if p:
        blocks["alpha"] = (2 * n_s + 2 * N, d)
    layout = VariableLayout(blocks, d, cfg.variant, n_s, n, p)

    lam = cfg.lam
    I = sp.identity(N, format="csc")
    # residual r = y + xi1 - xi2 - H alpha; regulariser lam*|xi1 + xi2|^2
    xi_blk = [[(1 + lam) * I, (lam - 1) * I], [(lam - 1) * I, (1 + lam) * I]]
    if cfg.tikhonov:
        xi_blk[0][0] = xi_blk[0][0] + lam * I
        xi_blk[1][1] = xi_blk[1][1] + lam * I
    y = data.y.ravel()
    if p:
        H = sp.csc_matrix(evaluate_basis(basis, data.x))
        W = sp.bmat(
            [
                [xi_blk[0][0], xi_blk[0][1], -H],
                [xi_blk[1][0], xi_blk[1][1], H],
                [-H.T, H.T, H.T @ H],
            ]
        )
        qw = 2.0 * np.concatenate([y, -y, -(H.T @ y)])
    else:
        W = sp.bmat(xi_blk)
        qw = 2.0 * np.concatenate([y, -y])
    P = sp.block_diag([sp.identity(2 * n_s) * (2.0 * lam), 2.0 * W], format="csc")
    q = np.concatenate([np.zeros(2 * n_s), qw])

    A1, b1 = _cone_rows(data.x, 0, 2 * n_s, d)
    A2, b2 = _cone_rows(data.x, n_s, 2 * n_s + N, d)
    A = sp.vstack([A1, A2]).tocsr()
    b = np.concatenate([b1, b2])
    th1, xi1 = _names(n_s, n, "1")
    th2, xi2 = _names(n_s, n, "2")
    names = th1 + th2 + xi1 + xi2 + [f"alpha[{k}]" for k in range(p)]
    return QpProblem(P=P, q=q, A=A, b=b, names=names, constant=float(y @ y)), layout


def build_fit(data: Dataset, cfg: FitConfig):
    if cfg.variant.is_dc:
        return build_dc_fit(data, cfg)
    return build_convex_fit(data, cfg)


def _check_layout(sol: QpSolution, layout: VariableLayout, data: Dataset):
    if sol.z.size != layout.d or layout.n_s != data.n_s or layout.n != data.n:
        raise LayoutMismatch(
            f"solution of size {sol.z.size} / layout {layout.d} ({layout.n_s}x{layout.n}) "
            f"do not match data ({data.n_s}x{data.n})"
        )


def extract_convex_model(sol: QpSolution, layout: VariableLayout, data: Dataset, cfg: FitConfig) -> MaxAffinePotential:
    if layout.variant.is_dc or "theta" not in layout.blocks:
        raise LayoutMismatch("layout does not come from a convex-type build")
    _check_layout(sol, layout, data)
    theta = np.array(sol.z[layout.slice("theta")])
    xi = np.array(sol.z[layout.slice("xi")]).reshape(data.n_s, data.n)
    anchors = np.array(data.x)
    if layout.variant is Variant.EQUILIBRIUM:
        # the eliminated zero plane (x0, 0, 0) is part of the fitted function
        anchors = np.vstack([anchors, cfg.x0[None, :]])
        theta = np.append(theta, 0.0)
        xi = np.vstack([xi, np.zeros((1, data.n))])
    sign = -1 if layout.variant.is_concave else 1
    return MaxAffinePotential(anchors, theta, xi, sign=sign, unique=cfg.lam > 0)


def extract_dc_model(sol: QpSolution, layout: VariableLayout, data: Dataset, cfg: FitConfig) -> DcPotential:
    if not layout.variant.is_dc:
        raise LayoutMismatch("layout does not come from a DC build")
    _check_layout(sol, layout, data)
    n_s, n = data.n_s, data.n
    z = sol.z
    phi1 = MaxAffinePotential(data.x, z[layout.slice("theta1")], z[layout.slice("xi1")].reshape(n_s, n),
                              unique=cfg.lam > 0)
    phi2 = MaxAffinePotential(data.x, z[layout.slice("theta2")], z[layout.slice("xi2")].reshape(n_s, n),
                              unique=cfg.lam > 0)
    alpha = np.array(z[layout.slice("alpha")]) if layout.p else None
    return DcPotential(phi1, phi2, alpha=alpha, basis=cfg.basis if layout.p else None)


@dataclass
class FitResult:
    model: MaxAffinePotential | DcPotential
    solution: QpSolution
    problem: QpProblem
    layout: VariableLayout
    info: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.solution.objective


def fit(data: Dataset, cfg: FitConfig, settings: SolverSettings | None = None, require_solved: bool = True) -> FitResult:
    """Build, solve and extract in one call."""
    from .errors import SolverFailure

    problem, layout = build_fit(data, cfg)
    sol = solve_qp(problem, settings)
    if require_solved and sol.status is not Status.SOLVED:
        raise SolverFailure(
            f"solver stopped with status {sol.status.value} "
            f"(prim={sol.primal_residual:.2e}, dual={sol.dual_residual:.2e}, comp={sol.comp_slackness:.2e})",
            sol,
        )
    if cfg.variant.is_dc:
        model = extract_dc_model(sol, layout, data, cfg)
    else:
        model = extract_convex_model(sol, layout, data, cfg)
    return FitResult(model, sol, problem, layout)
