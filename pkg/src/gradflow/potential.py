"""Max-affine and difference-of-convex potentials with log-sum-exp smoothing.

A max-affine potential is ``sign * max_i (<xi_i, x - x_i> + theta_i)``.  Its
smoothed version replaces the max by
``tau * log(mean_i exp(plane_i(x) / tau))``, which lies between
``max - tau*log(n_s)`` and ``max``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, DomainError, SchemaError


def _basis_constant(n):
    def unit(k):
        e = np.zeros(n)
        e[k] = 1.0
        return lambda x: e.copy()

    return [unit(k) for k in range(n)]


def _basis_linear(n):
    def entry(r, c):
        def h(x):
            out = np.zeros(n)
            out[r] = np.asarray(x, dtype=float)[c]
            return out

        return h

    return [entry(r, c) for r in range(n) for c in range(n)]


BASES = {
    "constant": _basis_constant,
    "linear": _basis_linear,
    "affine": lambda n: _basis_constant(n) + _basis_linear(n),
}


def get_basis(basis, n: int | None = None) -> list:
    """Resolve a named basis (``constant``, ``linear``, ``affine``) or pass a
    sequence of callables through unchanged."""
    if isinstance(basis, str):
        if basis not in BASES:
            raise ValueError(f"unknown basis {basis!r}; choose from {sorted(BASES)}")
        return BASES[basis](n) if n is not None else []
    return list(basis)


def _vec(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise DimensionMismatch(f"expected a point of dimension {n}, got shape {x.shape}")
    return x


@dataclass(frozen=True, eq=False)
class MaxAffinePotential:
    anchors: np.ndarray
    heights: np.ndarray
    slopes: np.ndarray
    sign: int = 1
    unique: bool = True

    def __post_init__(self):
        anchors = np.array(self.anchors, dtype=float)
        heights = np.array(self.heights, dtype=float).ravel()
        slopes = np.array(self.slopes, dtype=float)
        if anchors.ndim != 2 or slopes.shape != anchors.shape or heights.size != anchors.shape[0]:
            raise DimensionMismatch(
                f"inconsistent shapes: anchors {anchors.shape}, heights {heights.shape}, slopes {slopes.shape}"
            )
        if anchors.shape[0] < 1:
            raise DimensionMismatch("a max-affine potential needs at least one plane")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        for arr in (anchors, heights, slopes):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model parameters must be finite")
            arr.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "heights", heights)
        object.__setattr__(self, "slopes", slopes)
        # plane_i(x) = <xi_i, x> + offset_i
        offsets = heights - np.einsum("ij,ij->i", slopes, anchors)
        offsets.setflags(write=False)
        object.__setattr__(self, "_offsets", offsets)

    @property
    def n(self) -> int:
        return self.anchors.shape[1]

    @property
    def n_planes(self) -> int:
        return self.anchors.shape[0]

    def plane_values(self, x) -> np.ndarray:
        """Values of every affine piece at ``x`` (before applying ``sign``)."""
        x = _vec(x, self.n)
        return self.slopes @ x + self._offsets

    def __eq__(self, other):
        if not isinstance(other, MaxAffinePotential):
            return NotImplemented
        return (
            self.sign == other.sign
            and np.array_equal(self.anchors, other.anchors)
            and np.array_equal(self.heights, other.heights)
            and np.array_equal(self.slopes, other.slopes)
        )

    def to_dict(self) -> dict:
        return {
            "kind": "maxaffine",
            "n": self.n,
            "sign": self.sign,
            "anchors": self.anchors.tolist(),
            "heights": self.heights.tolist(),
            "slopes": self.slopes.tolist(),
        }


@dataclass(frozen=True, eq=False)
class DcPotential:
    phi1: MaxAffinePotential
    phi2: MaxAffinePotential
    alpha: np.ndarray | None = None
    basis: str | Sequence[Callable] | None = None

    def __post_init__(self):
        if self.phi1.n != self.phi2.n:
            raise DimensionMismatch("both convex pieces must share the state dimension")
        if self.phi1.sign != 1 or self.phi2.sign != 1:
            raise ValueError("DC pieces must both be convex (sign +1)")
        if (self.alpha is None) != (self.basis is None):
            raise ValueError("alpha and basis must be given together")
        if self.alpha is not None:
            alpha = np.array(self.alpha, dtype=float).ravel()
            fields = get_basis(self.basis, self.phi1.n)
            if alpha.size != len(fields):
                raise DimensionMismatch(f"{alpha.size} coefficients for {len(fields)} basis fields")
            alpha.setflags(write=False)
            object.__setattr__(self, "alpha", alpha)
            object.__setattr__(self, "_fields", fields)
        else:
            object.__setattr__(self, "_fields", [])

    @property
    def n(self) -> int:
        return self.phi1.n

    @property
    def n_s(self) -> int:
        return max(self.phi1.n_planes, self.phi2.n_planes)

    def parametric_part(self, x) -> np.ndarray:
        x = _vec(x, self.n)
        out = np.zeros(self.n)
        for a, h in zip(self.alpha if self.alpha is not None else [], self._fields):
            out += a * np.asarray(h(x), dtype=float)
        return out

    def __eq__(self, other):
        if not isinstance(other, DcPotential):
            return NotImplemented
        same_alpha = (self.alpha is None and other.alpha is None) or (
            self.alpha is not None and other.alpha is not None and np.array_equal(self.alpha, other.alpha)
        )
        return self.phi1 == other.phi1 and self.phi2 == other.phi2 and same_alpha and self.basis == other.basis

    def to_dict(self) -> dict:
        doc = {"kind": "dc", "n": self.n, "sign": 1, "phi1": self.phi1.to_dict(), "phi2": self.phi2.to_dict()}
        if self.alpha is not None:
            if not isinstance(self.basis, str):
                raise SchemaError("only named bases can be serialized")
            doc["alpha"] = self.alpha.tolist()
            doc["basis"] = self.basis
        return doc


def eval_max_affine(model: MaxAffinePotential, x) -> float:
    return float(model.sign * np.max(model.plane_values(x)))


def active_planes(model: MaxAffinePotential, x, tol: float = 0.0) -> np.ndarray:
    """Indices of the planes within ``tol`` of the maximum at ``x`` (never empty)."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    v = model.plane_values(x)
    return np.flatnonzero(v >= v.max() - tol)


def _check_tau(tau):
    if not tau > 0:
        raise DomainError(f"tau must be > 0, got {tau}")


def _softmax(v, tau):
    s = (v - v.max()) / tau
    w = np.exp(s)
    total = w.sum()
    return w / total, s, total


def eval_smoothed(model: MaxAffinePotential, tau: float, x) -> float:
    """Smoothed value, including ``sign``; stable for small ``tau``."""
    _check_tau(tau)
    v = model.plane_values(x)
    vmax = v.max()
    val = vmax + tau * (math.log(np.exp((v - vmax) / tau).sum()) - math.log(v.size))
    return float(model.sign * val)


def softmax_weights(model: MaxAffinePotential, tau: float, x) -> np.ndarray:
    _check_tau(tau)
    return _softmax(model.plane_values(x), tau)[0]


def grad_smoothed(model: MaxAffinePotential, tau: float, x) -> np.ndarray:
    """Gradient of ``eval_smoothed``: softmax-weighted average of the slopes."""
    w = softmax_weights(model, tau, x)
    return model.sign * (w @ model.slopes)


def hessian_smoothed(model: MaxAffinePotential, tau: float, x) -> np.ndarray:
    """Hessian of ``eval_smoothed``: ``sign/tau`` times the softmax covariance of the slopes."""
    w = softmax_weights(model, tau, x)
    mean = w @ model.slopes
    centered = model.slopes - mean
    H = (centered.T * w) @ centered / tau
    return model.sign * 0.5 * (H + H.T)


def eval_dc(dc: DcPotential, x) -> float:
    return eval_max_affine(dc.phi1, x) - eval_max_affine(dc.phi2, x)


def eval_dc_smoothed(dc: DcPotential, tau: float, x) -> float:
    return eval_smoothed(dc.phi1, tau, x) - eval_smoothed(dc.phi2, tau, x)


def grad_dc_smoothed(dc: DcPotential, tau: float, x) -> np.ndarray:
    return grad_smoothed(dc.phi1, tau, x) - grad_smoothed(dc.phi2, tau, x)


def predict_field(model, tau: float, x) -> np.ndarray:
    """Identified vector field ``-grad phi`` (plus the parametric part for DC models)."""
    if isinstance(model, DcPotential):
        out = -grad_dc_smoothed(model, tau, x)
        if model.alpha is not None:
            out = out + model.parametric_part(x)
        return out
    return -grad_smoothed(model, tau, x)


def predict_field_batch(model, tau: float, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(model, DcPotential):
        return _batch_dc(model, tau, X)
    return -model.sign * _batch_grad(model, tau, X)


def _batch_grad(model: MaxAffinePotential, tau: float, X: np.ndarray) -> np.ndarray:
    _check_tau(tau)
    if X.shape[1] != model.n:
        raise DimensionMismatch(f"expected points of dimension {model.n}, got {X.shape[1]}")
    V = X @ model.slopes.T + model._offsets
    S = (V - V.max(axis=1, keepdims=True)) / tau
    W = np.exp(S)
    W /= W.sum(axis=1, keepdims=True)
    return W @ model.slopes


def _batch_dc(dc: DcPotential, tau: float, X: np.ndarray) -> np.ndarray:
    out = -(_batch_grad(dc.phi1, tau, X) - _batch_grad(dc.phi2, tau, X))
    if dc.alpha is not None:
        out = out + np.array([dc.parametric_part(x) for x in X])
    return out


def tau_for_accuracy(epsilon: float, n_s: int, dc: bool = False) -> float:
    """Largest safe smoothing temperature for a uniform gap below ``epsilon``.

    Returns ``0.99 * epsilon / log(n_s)``, halved for DC models.
    """
    if not epsilon > 0:
        raise DomainError("epsilon must be > 0")
    if n_s < 2:
        raise DomainError("n_s must be >= 2; a single plane is exact for every tau")
    tau = 0.99 * epsilon / math.log(n_s)
    return tau / 2.0 if dc else tau


def model_to_json(model) -> str:
    # repr of a Python float is the shortest string that round-trips exactly
    return json.dumps(model.to_dict())


def _max_affine_from_dict(doc) -> MaxAffinePotential:
    try:
        n = int(doc["n"])
        anchors = np.asarray(doc["anchors"], dtype=float).reshape(-1, n)
        slopes = np.asarray(doc["slopes"], dtype=float).reshape(-1, n)
        return MaxAffinePotential(anchors, doc["heights"], slopes, sign=int(doc.get("sign", 1)))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid max-affine model: {exc}") from exc


def model_from_dict(doc):
    kind = doc.get("kind")
    if kind == "maxaffine":
        return _max_affine_from_dict(doc)
    if kind == "dc":
        if "phi1" not in doc or "phi2" not in doc:
            raise SchemaError("dc model needs phi1 and phi2")
        return DcPotential(
            _max_affine_from_dict(doc["phi1"]),
            _max_affine_from_dict(doc["phi2"]),
            alpha=doc.get("alpha"),
            basis=doc.get("basis"),
        )
    raise SchemaError(f"unknown model kind {kind!r}")


def model_from_json(text: str):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        from .errors import ParseError

        raise ParseError(f"model file is not valid JSON: {exc.msg}", exc.lineno, exc.colno) from exc
    if not isinstance(doc, dict):
        raise SchemaError("model document must be a JSON object")
    return model_from_dict(doc)
