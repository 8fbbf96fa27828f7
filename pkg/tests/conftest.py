import json
import os

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import HealthCheck, settings

from gradflow.qp import QpProblem

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ORACLE_PATH = os.path.join(os.path.dirname(__file__), "oracles", "frozen.json")


@pytest.fixture(scope="session")
def frozen():
    with open(ORACLE_PATH, encoding="utf-8") as fh:
        return json.load(fh)


def random_qp(rng, d, m, shift=0.1):
    """Strictly convex, feasible QP with a known interior point."""
    L = rng.normal(size=(d, d))
    P = L @ L.T + shift * np.eye(d)
    q = rng.normal(size=d)
    A = rng.normal(size=(m, d))
    b = A @ rng.normal(size=d) + np.abs(rng.normal(size=m))
    return QpProblem(sp.csc_matrix(P), q, sp.csr_matrix(A), b)


def max_affine_data(rng, n_planes=8, n_s=40, n=2):
    """Samples of -grad of a random convex max-affine function, away from kinks."""
    slopes = rng.normal(size=(n_planes, n)) * 2
    offsets = rng.normal(size=n_planes)
    xs, ys = [], []
    while len(xs) < n_s:
        x = rng.uniform(-2, 2, size=n)
        v = slopes @ x + offsets
        top = np.sort(v)[-2:]
        if top[1] - top[0] > 0.05:
            xs.append(x)
            ys.append(-slopes[np.argmax(v)])
    return np.array(xs), np.array(ys), slopes, offsets


def symmetric_max_affine_data(rng, n_planes=8, per_plane=5):
    """Exact samples of -grad of ``max_k <u_k, x>`` with unit slopes ``u_k`` at evenly spaced angles.

    One random cluster near a plane's centre direction is rotated onto every
    plane, so all regions share the same mean potential.  The min-norm heights
    are then the generating values minus their mean, no new kink passes
    through a sample, and the exact optimum has objective lambda*||theta||^2.
    Generic random data does not have this property: shrinking the heights
    pulls other planes up to touch samples.
    """
    ang = 2 * np.pi * np.arange(n_planes) / n_planes
    slopes = np.column_stack([np.cos(ang), np.sin(ang)])
    half = np.pi / n_planes
    a = rng.uniform(-0.4 * half, 0.4 * half, per_plane)
    r = rng.uniform(0.8, 1.5, per_plane)
    x = np.vstack([np.column_stack([r * np.cos(t + a), r * np.sin(t + a)]) for t in ang])
    y = -np.repeat(slopes, per_plane, axis=0)
    return x, y, slopes
