"""Eikonal front propagation in R^d from two disjoint balls, no obstacle."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..nn import OutputMap
from .base import ProblemSpec, dist, sphere_directions

R0 = 0.5
HORIZON = 1.0


def centers(d: int) -> tuple[np.ndarray, np.ndarray]:
    xa = np.zeros(d)
    xa[0] = 1.0
    return xa, -xa


def eikonal_value(t, X, T: float = HORIZON) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    tau = T - np.asarray(t, dtype=np.float64)
    xa, xb = centers(X.shape[1])
    da = np.linalg.norm(X - xa, axis=1)
    db = np.linalg.norm(X - xb, axis=1)
    return np.minimum(np.maximum(da - tau, 0.0) - R0, np.maximum(db - tau, 0.0) - R0)


def make_eikonal(d: int = 2) -> ProblemSpec:
    if d < 2:
        raise ValueError("the eikonal benchmark needs d >= 2")
    xa, xb = centers(d)

    def f(x, a):
        return a

    def phi(x):
        return ad.minimum(ad.sub(dist(x, xa), R0), ad.sub(dist(x, xb), R0))

    return ProblemSpec(
        name="eikonal",
        d=d,
        T=HORIZON,
        f=f,
        g=None,
        phi=phi,
        control_dim=d,
        control_map=OutputMap.ball(1.0),
        sampling_box=(np.full(d, -3.0), np.full(d, 3.0)),
        oracle=lambda t, X: eikonal_value(t, X),
        plane_extent=(-3.0, 3.0, -3.0, 3.0),
        control_grid=sphere_directions if d == 2 else None,
        params={"r0": R0},
    )
