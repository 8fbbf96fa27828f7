"""Trajectory data: simulation, noise, derivative estimation, datasets and files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .builder import Dataset
from .errors import (
    DegenerateSplit,
    DegenerateTimes,
    DimensionMismatch,
    DomainError,
    NonFiniteState,
    ParseError,
    SchemaError,
    WindowTooLarge,
)

# states beyond this norm are treated as a blow-up, well before float overflow
_BLOWUP = 1e100


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    x0: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.array(self.times, dtype=float).ravel()
        x = np.array(self.states, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[0] != t.size:
            raise DimensionMismatch(f"{t.size} times but states of shape {x.shape}")
        if t.size == 0:
            raise DomainError("a trajectory needs at least one sample")
        if np.any(np.diff(t) <= 0):
            raise DomainError("times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise NonFiniteState("trajectory contains non-finite values")
        x0 = x[0].copy() if self.x0 is None else np.array(self.x0, dtype=float).ravel()
        if x0.size != x.shape[1]:
            raise DimensionMismatch("x0 dimension differs from the states")
        for a in (t, x, x0):
            a.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "x0", x0)

    def __len__(self):
        return self.times.size

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.x0, other.x0)
        )


@dataclass(frozen=True)
class FieldSpec:
    """Vector field ``f`` of ``x' = f(x)``, optionally with its potential.

    ``field`` and ``potential`` accept arrays of shape ``(..., n)``.  For a
    gradient flow ``field = -grad(potential)``.
    """

    field: Callable[[np.ndarray], np.ndarray]
    n: int
    potential: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "custom"

    def __call__(self, x):
        return self.field(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class DerivativeEstimate:
    x: np.ndarray
    y: np.ndarray
    residual: float
    clamped: bool = False


def quartic_field(a: float = 0.7, b: float = -0.5, c: float = 0.15) -> FieldSpec:
    """Quartic benchmark ``phi = a x1^2 + b x1 x2 + a x2^2 - c x1^4 - c x2^4``."""

    def potential(x):
        x1, x2 = x[..., 0], x[..., 1]
        return a * x1**2 + b * x1 * x2 + a * x2**2 - c * x1**4 - c * x2**4

    def field(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([-2 * a * x1 - b * x2 + 4 * c * x1**3, -b * x1 - 2 * a * x2 + 4 * c * x2**3], axis=-1)

    return FieldSpec(field=field, n=2, potential=potential, name=f"quartic(a={a},b={b},c={c})")


def potential_gradient(spec: FieldSpec, x) -> np.ndarray:
    return -spec.field(np.asarray(x, dtype=float))


def _rk4_interval(f, x, dt, h_max):
    steps = max(1, math.ceil(dt / h_max - 1e-12))
    h = dt / steps
    for _ in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > _BLOWUP:
            raise NonFiniteState("state diverged during integration")
    return x


def simulate_gradient_flow(spec: FieldSpec, x0, t_grid, h_max: float = 1e-3) -> Trajectory:
    """Classical RK4 with fixed substeps of at most ``h_max`` between output instants."""
    t = np.asarray(t_grid, dtype=float).ravel()
    x = np.asarray(x0, dtype=float).ravel()
    if x.size != spec.n:
        raise DimensionMismatch(f"x0 has {x.size} entries, field expects {spec.n}")
    if t.size == 0 or t[0] != 0.0:
        raise DomainError("t_grid must start at 0")
    if np.any(np.diff(t) <= 0):
        raise DomainError("t_grid must be strictly increasing")
    if not h_max > 0:
        raise DomainError("h_max must be positive")
    out = np.empty((t.size, x.size))
    out[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, t.size):
            x = _rk4_interval(spec, x, t[k] - t[k - 1], h_max)
            out[k] = x
    return Trajectory(t, out, np.asarray(x0, dtype=float).ravel(), {"field": spec.name, "h_max": h_max})


def add_state_noise(traj: Trajectory, sigma_w: float, seed) -> Trajectory:
    """I.i.d. N(0, sigma_w^2) on every state coordinate.

    ``seed`` is anything ``numpy.random.default_rng`` accepts, including a
    Generator (which is then advanced).
    """
    if not sigma_w >= 0:
        raise DomainError("sigma_w must be nonnegative")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, size=traj.states.shape) * sigma_w
    meta = dict(traj.meta, sigma_w=sigma_w)
    return Trajectory(traj.times, traj.states + noise, traj.x0, meta)


def estimate_derivatives(traj: Trajectory, window: int = 7, degree: int = 3) -> list[DerivativeEstimate]:
    """Tricube-weighted local polynomial fit around each instant.

    The window is centred where possible and shifted inwards (clamped) near
    the ends.  The derivative of the local polynomial at ``t_k`` is ``y_k``.
    """
    if degree not in (2, 3):
        raise DomainError("degree must be 2 or 3")
    if window % 2 == 0 or window < degree + 1:
        raise DomainError(f"window must be odd and at least {degree + 1}")
    N = len(traj)
    if window > N:
        raise WindowTooLarge(f"window {window} exceeds trajectory length {N}")
    t, X = traj.times, traj.states
    half = window // 2
    out = []
    for k in range(N):
        lo = min(max(k - half, 0), N - window)
        sl = slice(lo, lo + window)
        dt = t[sl] - t[k]
        reach = float(np.max(np.abs(dt)))
        if reach <= 0:
            raise DegenerateTimes("window instants coincide")
        h = reach * (window + 1) / (window - 1)
        u = dt / h
        w = (1.0 - np.abs(u) ** 3) ** 3
        V = np.vander(u, degree + 1, increasing=True)
        sw = np.sqrt(w)[:, None]
        if np.linalg.matrix_rank(sw * V) < degree + 1:
            raise DegenerateTimes("window instants are not distinct enough for the fit degree")
        coef, *_ = np.linalg.lstsq(sw * V, sw * X[sl], rcond=None)
        fitted = V @ coef
        res = math.sqrt(float(np.sum(w[:, None] * (X[sl] - fitted) ** 2) / (np.sum(w) * X.shape[1])))
        out.append(DerivativeEstimate(X[k].copy(), coef[1] / h, res, clamped=lo != k - half))
    return out


def assemble_dataset(estimates: Sequence[Sequence[DerivativeEstimate]]) -> Dataset:
    """Concatenate per-trajectory estimates, trajectory by trajectory, in time order."""
    rows = [e for est in estimates for e in est]
    if not rows:
        raise DomainError("no derivative estimates to assemble")
    n = rows[0].x.size
    for e in rows:
        if e.x.size != n or e.y.size != n:
            raise DimensionMismatch("trajectories disagree on the state dimension")
    return Dataset(np.array([e.x for e in rows]), np.array([e.y for e in rows]))


def split_dataset(data: Dataset, train_fraction: float, seed) -> tuple[Dataset, Dataset]:
    """Seeded uniform split; the training side gets ``round(fraction * n_s)`` rows (halves up)."""
    if not 0 < train_fraction < 1:
        raise DomainError("train_fraction must lie in (0, 1)")
    n = data.n_s
    n_train = math.floor(train_fraction * n + 0.5)
    if n_train == 0 or n_train == n:
        raise DegenerateSplit(f"split of {n} samples at {train_fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(perm[:n_train])), data.subset(np.sort(perm[n_train:]))


# ----------------------------------------------------------------------------
# experiment protocol

DEFAULT_LAMBDA_GRID = tuple(10.0**k for k in range(-10, -1))
DEFAULT_TAU_GRID = tuple(0.01 * 2**k for k in range(7))


@dataclass(frozen=True)
class ExperimentConfig:
    domain: tuple[float, float] = (-1.9, 1.9)
    n_traj: int = 18
    n_samples: int = 118
    sigma_w: float = 0.01
    dt: float = 0.1
    window: int = 7
    degree: int = 3
    seed: int = 0
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    tau_grid: tuple[float, ...] = DEFAULT_TAU_GRID
    train_fraction: float = 0.8
    coefficients: tuple[float, float, float] = (0.7, -0.5, 0.15)
    variant: str = "dc"
    h_max: float = 1e-3
    max_draws: int = 10_000

    def __post_init__(self):
        lo, hi = self.domain
        if not lo < hi:
            raise SchemaError("domain must be (low, high) with low < high")
        if self.n_traj < 1 or self.n_samples < self.n_traj:
            raise SchemaError("need n_samples >= n_traj >= 1")
        if not self.dt > 0 or not self.h_max > 0:
            raise SchemaError("dt and h_max must be positive")
        if not self.lambda_grid or not self.tau_grid:
            raise SchemaError("grids must be nonempty")
        if not 0 < self.train_fraction < 1:
            raise SchemaError("train_fraction must lie in (0, 1)")

    def samples_per_trajectory(self) -> list[int]:
        base, extra = divmod(self.n_samples, self.n_traj)
        return [base + 1] * extra + [base] * (self.n_traj - extra)

    def field(self) -> FieldSpec:
        return quartic_field(*self.coefficients)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise SchemaError("experiment config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in doc.items():
            default = cls.__dataclass_fields__[k].default
            try:
                if isinstance(default, tuple):
                    if not isinstance(v, (list, tuple)):
                        raise TypeError
                    kw[k] = tuple(float(e) for e in v)
                elif isinstance(default, bool) or isinstance(default, str):
                    if not isinstance(v, type(default)):
                        raise TypeError
                    kw[k] = v
                elif isinstance(default, int):
                    if isinstance(v, bool) or not isinstance(v, int):
                        raise TypeError
                    kw[k] = v
                else:
                    if isinstance(v, bool) or not isinstance(v, (int, float)):
                        raise TypeError
                    kw[k] = float(v)
            except (TypeError, ValueError):
                raise SchemaError(f"bad value for {k!r}: {v!r}") from None
        if len(kw.get("domain", (0, 1))) != 2 or len(kw.get("coefficients", (0, 0, 0))) != 3:
            raise SchemaError("domain needs 2 entries and coefficients 3")
        return cls(**kw)

    def replace(self, **changes) -> "ExperimentConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return ExperimentConfig(**d)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc.msg}", exc.lineno, exc.colno) from None
    return ExperimentConfig.from_dict(doc)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")


def simulate_protocol(cfg: ExperimentConfig, seed) -> list[Trajectory]:
    """Noiseless trajectories from uniformly drawn initial points.

    A draw is rejected when the flow blows up or any sampled state leaves the
    domain, so every returned sample lies in the domain.
    """
    spec = cfg.field()
    lo, hi = cfg.domain
    rng = np.random.default_rng(seed)
    trajs = []
    draws = 0
    for n_i in cfg.samples_per_trajectory():
        t = cfg.dt * np.arange(n_i)
        while True:
            draws += 1
            if draws > cfg.max_draws:
                raise DomainError("could not draw trajectories that stay inside the domain")
            x0 = rng.uniform(lo, hi, size=spec.n)
            try:
                tr = simulate_gradient_flow(spec, x0, t, cfg.h_max)
            except NonFiniteState:
                continue
            if np.all((tr.states >= lo) & (tr.states <= hi)):
                trajs.append(tr)
                break
    return trajs


def effective_window(window: int, degree: int, length: int) -> int:
    """Largest admissible odd window not exceeding ``window`` or ``length``."""
    w = min(window, length if length % 2 else length - 1)
    if w < degree + 1:
        raise WindowTooLarge(f"trajectory of {length} samples is too short for degree {degree}")
    return w


def generate_dataset(cfg: ExperimentConfig, seed=None, sigma_w: float | None = None):
    """Full data pipeline; returns ``(dataset, trajectories, noisy_trajectories)``."""
    seed = cfg.seed if seed is None else seed
    sigma = cfg.sigma_w if sigma_w is None else sigma_w
    layout_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    clean = simulate_protocol(cfg, np.random.default_rng(layout_ss))
    noise_rng = np.random.default_rng(noise_ss)
    noisy = [add_state_noise(tr, sigma, noise_rng) for tr in clean]
    est = [estimate_derivatives(tr, effective_window(cfg.window, cfg.degree, len(tr)), cfg.degree) for tr in noisy]
    return assemble_dataset(est), clean, noisy


# ----------------------------------------------------------------------------
# CSV files

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_rows_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    text = buf.getvalue()
    if path is None:
        return text
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return text


def _read_csv(source):
    """Return ``(header, float matrix)``; ``source`` is a path or a file object."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("empty file", 1, 1)
    header = [h.strip() for h in next(csv.reader([lines[0]]))]
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = next(csv.reader([line]))
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(cells)}", ln)
        row = []
        col = 1
        for cell in cells:
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"not a number: {cell!r}", ln, col) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite value {cell!r}", ln, col)
            row.append(v)
            col += len(cell) + 1
        rows.append(row)
    if not rows:
        raise ParseError("no data rows", 2)
    return header, np.array(rows, dtype=float)


def _expect(header, names, what):
    if header != names:
        raise SchemaError(f"{what} header must be {','.join(names)}; got {','.join(header)}")


def write_trajectory_csv(traj: Trajectory, path=None) -> str:
    header = ["t"] + [f"x{i + 1}" for i in range(traj.n)]
    return write_rows_csv(path, header, np.column_stack([traj.times, traj.states]))


def read_trajectory_csv(source) -> Trajectory:
    header, M = _read_csv(source)
    n = len(header) - 1
    if n < 1:
        raise SchemaError("trajectory file needs a t column and at least one state column")
    _expect(header, ["t"] + [f"x{i + 1}" for i in range(n)], "trajectory")
    try:
        return Trajectory(M[:, 0], M[:, 1:])
    except DomainError as exc:
        raise SchemaError(str(exc)) from None


def write_dataset_csv(data: Dataset, path=None) -> str:
    n = data.n
    header = [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)]
    return write_rows_csv(path, header, np.column_stack([data.x, data.y]))


def read_dataset_csv(source) -> Dataset:
    header, M = _read_csv(source)
    if len(header) % 2 or not header:
        raise SchemaError("dataset header must list x1..xn then y1..yn")
    n = len(header) // 2
    _expect(header, [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)], "dataset")
    return Dataset(M[:, :n], M[:, n:])


def write_points_csv(X, path=None, prefix="x") -> str:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return write_rows_csv(path, [f"{prefix}{i + 1}" for i in range(X.shape[1])], X)


def read_points_csv(source) -> np.ndarray:
    header, M = _read_csv(source)
    _expect(header, [f"x{i + 1}" for i in range(len(header))], "points")
    return M


def write_trajectories(trajs: Sequence[Trajectory], directory) -> list[str]:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, tr in enumerate(trajs):
        p = os.path.join(directory, f"traj_{i:03d}.csv")
        write_trajectory_csv(tr, p)
        paths.append(p)
    return paths
