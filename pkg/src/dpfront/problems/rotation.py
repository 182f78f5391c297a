"""Rotation with an obstacle: a 2-D reachability problem with a disk target
and a disk obstacle, controlled through the angular speed."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..nn import OutputMap
from .base import ProblemSpec, dist

X_A = np.array([1.0, 0.0])
X_B = np.array([0.0, 1.0])
R0 = 0.5
R1 = 0.25
HORIZON = 0.4
OMEGA = 2.0 * np.pi

_GOLD = 0.5 * (np.sqrt(5.0) - 1.0)


def _f(x, a):
    return ad.mul(ad.mul(OMEGA, a), ad.stack([ad.neg(x[:, 1]), x[:, 0]], axis=1))


def _g(x):
    return ad.sub(R1, dist(x, X_B))


def _phi(x):
    return ad.sub(dist(x, X_A), R0)


def _arc_values(r, s0, c0, delta, up_gap, down_gap):
    """``max(arc-max of g, g v phi at the end)`` for the arc ``theta0 -> theta0 + delta``."""
    sin_t = s0 * np.cos(delta) + c0 * np.sin(delta)
    cos_t = c0 * np.cos(delta) - s0 * np.sin(delta)
    # the arc passes the obstacle centre angle pi/2 (mod 2 pi): sin reaches 1
    through_top = np.where(delta >= 0.0, up_gap <= delta, down_gap <= -delta)
    max_sin = np.where(through_top, 1.0, np.maximum(s0, sin_t))
    r2 = r * r + 1.0
    g_arc = R1 - np.sqrt(np.maximum(r2 - 2.0 * r * max_sin, 0.0))
    phi_end = np.sqrt(np.maximum(r2 - 2.0 * r * cos_t, 0.0)) - R0
    return np.maximum(g_arc, phi_end)


def rotation_value(t, X, T: float = HORIZON, n_samples: int = 4096,
                   refine: bool = True, chunk: int = 512) -> np.ndarray:
    """Exact value of the rotation problem.

    The radius is invariant and an optimal trajectory sweeps a single arc
    from the start angle to its end angle, so the value is a 1-D minimum over
    the end angle of ``max(max of g along the arc, phi at the end)``.  Along a
    circle ``g`` depends on ``sin`` only and ``phi`` on ``cos`` only, which
    gives the arc maximum in closed form.  The minimum is located on a grid of
    ``n_samples`` end angles and polished by golden-section search on the
    bracketing cell.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    tau = np.broadcast_to(np.asarray(T - np.asarray(t, dtype=np.float64)), (len(X),))
    if np.any(tau < -1e-12):
        raise ValueError("t must lie in [0, T]")
    tau = np.maximum(tau, 0.0)
    out = np.empty(len(X))
    u = np.linspace(-1.0, 1.0, 2 * (n_samples // 2) + 1)
    for start in range(0, len(X), chunk):
        sl = slice(start, start + chunk)
        x = X[sl]
        r = np.hypot(x[:, 0], x[:, 1])[:, None]
        th0 = np.arctan2(x[:, 1], x[:, 0])[:, None]
        s0, c0 = np.sin(th0), np.cos(th0)
        up_gap = np.mod(np.pi / 2 - th0, 2 * np.pi)
        down_gap = np.mod(th0 - np.pi / 2, 2 * np.pi)
        reach = (OMEGA * tau[sl])[:, None]
        delta = reach * u[None, :]
        h = _arc_values(r, s0, c0, delta, up_gap, down_gap)
        i = np.argmin(h, axis=1)
        best = h[np.arange(len(x)), i]
        if refine:
            step = reach[:, 0] * (u[1] - u[0])
            centre = delta[np.arange(len(x)), i]
            lo = np.maximum(centre - step, -reach[:, 0])
            hi = np.minimum(centre + step, reach[:, 0])
            args = (r[:, 0], s0[:, 0], c0[:, 0])
            gaps = (up_gap[:, 0], down_gap[:, 0])
            a = hi - _GOLD * (hi - lo)
            b = lo + _GOLD * (hi - lo)
            fa = _arc_values(*args, a, *gaps)
            fb = _arc_values(*args, b, *gaps)
            for _ in range(60):
                left = fa <= fb
                hi = np.where(left, b, hi)
                lo = np.where(left, lo, a)
                a_new = np.where(left, hi - _GOLD * (hi - lo), b)
                b_new = np.where(left, a, lo + _GOLD * (hi - lo))
                f_new = _arc_values(*args, np.where(left, a_new, b_new), *gaps)
                fa, fb = np.where(left, f_new, fb), np.where(left, fa, f_new)
                a, b = a_new, b_new
            best = np.minimum(best, np.minimum(fa, fb))
        out[sl] = best
    return out


def make_rotation() -> ProblemSpec:
    return ProblemSpec(
        name="rotation",
        d=2,
        T=HORIZON,
        f=_f,
        g=_g,
        phi=_phi,
        control_dim=1,
        control_map=OutputMap.sigmoid_affine(-1.0, 1.0),
        sampling_box=(np.array([-2.0, -2.0]), np.array([2.0, 2.0])),
        oracle=lambda t, X: rotation_value(t, X),
        plane_extent=(-2.0, 2.0, -2.0, 2.0),
        control_grid=lambda n: np.linspace(-1.0, 1.0, n)[:, None],
        params={"x_A": X_A.tolist(), "x_B": X_B.tolist(), "r0": R0, "r1": R1},
    )
