"""Eikonal-advection front propagation through a wall with a door.

The front expands at speed ``c`` and is carried along ``e_1`` at speed ``b``.
The obstacle ``g`` is a slab around ``x_1 = g_c``, pierced by a cylindrical
door of radius growing with the level.  Exact values come from a
two-dimensional reduction in the coordinates ``(x_1, |x_perp|)``:

* when the straight characteristic from the initial front to ``x`` clears
  the wall the value is ``(|x - b tau e_1| - c tau)_+ + alpha_min``;
* otherwise the characteristic bends at the exit corner of the door at level
  ``v`` and ``v`` solves ``t_1(v) + t_2(v) = tau``, where ``t_1`` is the first
  time the front ``{phi = v}`` covers the corner and ``t_2`` the travel time
  from the corner to ``x``.  Both are roots of quadratics; where a root is
  complex its real part keeps the residual continuous for Newton.

Rollouts use the velocity ``-(b e_1 + c a)``: trajectories run against the
front's motion, so that the front itself moves along ``+e_1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..nn import OutputMap
from .base import ProblemSpec, sphere_directions

STRAIGHT = "straight"
TWO_SEGMENT = "two-segment"
UNREACHED = "unreached"


class NewtonError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class ObstacleGeometry:
    g_max: float = 2.0
    g_min: float = -2.0
    c_e: float = 1.0
    c_x: float = 1.5
    g_c: float = 4.0
    b: float = 1.0
    c: float = 0.5
    alpha_min: float = -1.0
    T: float = 4.0

    @classmethod
    def large_drift(cls, **kw) -> "ObstacleGeometry":
        return cls(b=1.0, c=0.5, **kw)

    @classmethod
    def small_drift(cls, **kw) -> "ObstacleGeometry":
        return cls(b=0.5, c=1.0, **kw)

    # reduced-coordinate helpers; z1 = x_1, z2 = |x_perp|
    def g2(self, z1, z2):
        return np.minimum(self.g_max - self.c_e * np.abs(z1 - self.g_c),
                          self.c_x * z2 + self.g_min)

    def exit_x(self, v):
        return self.g_c + (self.g_max - v) / self.c_e

    def door_radius(self, v):
        return (v - self.g_min) / self.c_x

    def in_shadow(self, z1, z2, v) -> bool:
        return v < self.g_max and z1 >= self.exit_x(v) and z2 > self.door_radius(v)

    def unobstructed(self, z1, z2, tau):
        return max(math.hypot(z1 - self.b * tau, z2) - self.c * tau, 0.0) + self.alpha_min


def _first_root(A, B, C, dB=0.0, dC=0.0):
    """Smallest non-negative root of ``A s^2 + B s + C`` and its derivative.

    Returns ``(s, ds, imag)``.  A complex pair is replaced by its real part
    ``-B / 2A``; ``imag`` carries the size of the discarded imaginary part.
    """
    if abs(A) < 1e-14:
        s = -C / B
        return s, -(dB * s + dC) / B, 0.0
    D = B * B - 4.0 * A * C
    if D < 0.0:
        return -B / (2.0 * A), -dB / (2.0 * A), math.sqrt(-D) / (2.0 * abs(A))
    sq = math.sqrt(D)
    r1, r2 = (-B - sq) / (2.0 * A), (-B + sq) / (2.0 * A)
    lo, hi = min(r1, r2), max(r1, r2)
    s = lo if lo >= 0.0 else hi
    den = 2.0 * A * s + B
    ds = -(dB * s + dC) / den if den != 0.0 else 0.0
    return s, ds, 0.0


def _arrival_time(geom: ObstacleGeometry, z1, z2, rho):
    """First time the front ``{phi <= alpha + rho}`` covers ``(z1, z2)``, or ``None``."""
    A = geom.b ** 2 - geom.c ** 2
    s, _, im = _first_root(A, -2.0 * (geom.b * z1 + geom.c * rho), z1 * z1 + z2 * z2 - rho * rho)
    if im > 0.0 or s < 0.0:
        return None
    return s


def straight_blocked(geom: ObstacleGeometry, z1, z2, v) -> bool:
    """Does the first-arrival characteristic at level ``v`` hit the wall?"""
    if not geom.in_shadow(z1, z2, v):
        return False
    rho = v - geom.alpha_min
    if z1 * z1 + z2 * z2 <= rho * rho:
        return False
    s = _arrival_time(geom, z1, z2, rho)
    if s is None:
        return True
    k = rho / (rho + geom.c * s)
    q1, q2 = (z1 - geom.b * s) * k, z2 * k
    x_exit = geom.exit_x(v)
    if z1 <= q1:
        return False
    cross = q2 + (z2 - q2) * (x_exit - q1) / (z1 - q1)
    return cross > geom.door_radius(v)


def corner_residual(geom: ObstacleGeometry, z1, z2, tau, v):
    """``t_1(v) + t_2(v) - tau`` through the exit corner, its v-derivative and
    the largest imaginary part met."""
    b, c = geom.b, geom.c
    A = b * b - c * c
    y1, y2 = geom.exit_x(v), geom.door_radius(v)
    dy1, dy2 = -1.0 / geom.c_e, 1.0 / geom.c_x
    rho = v - geom.alpha_min
    # corner -> x
    dx1, dx2 = z1 - y1, z2 - y2
    t2, dt2, im2 = _first_root(
        A, -2.0 * b * dx1, dx1 * dx1 + dx2 * dx2,
        dB=2.0 * b * dy1, dC=-2.0 * dx1 * dy1 - 2.0 * dx2 * dy2)
    # front -> corner
    t1, dt1, im1 = _first_root(
        A, -2.0 * (b * y1 + c * rho), y1 * y1 + y2 * y2 - rho * rho,
        dB=-2.0 * (b * dy1 + c), dC=2.0 * y1 * dy1 + 2.0 * y2 * dy2 - 2.0 * rho)
    return t1 + t2 - tau, dt1 + dt2, max(im1, im2)


def _feasible_exact(geom, z1, z2, tau, v) -> bool:
    if not geom.in_shadow(z1, z2, v) or not straight_blocked(geom, z1, z2, v):
        return True
    r, _, im = corner_residual(geom, z1, z2, tau, v)
    return im <= 1e-8 and r <= 0.0


def _bisect_feasible(geom, z1, z2, tau, lo, hi, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _feasible_exact(geom, z1, z2, tau, mid):
            hi = mid
        else:
            lo = mid
    return hi


def _fallback(geom, z1, z2, tau, v_s) -> tuple[float, str]:
    v = _bisect_feasible(geom, z1, z2, tau, v_s, geom.g_max)
    if v - v_s <= 1e-12:
        return v_s, STRAIGHT
    _, _, im = corner_residual(geom, z1, z2, tau, v)
    return v, (UNREACHED if im > 1e-8 or v >= geom.g_max else TWO_SEGMENT)


def appendix_point(geom: ObstacleGeometry, z1: float, z2: float, tau: float,
                   max_iter: int = 100, tol: float = 1e-10) -> tuple[float, str]:
    """Exact value and branch at one reduced point ``(z1, z2)`` with time-to-go ``tau``."""
    v_s = max(geom.unobstructed(z1, z2, tau), float(geom.g2(z1, z2)))
    if tau <= 0.0 or not straight_blocked(geom, z1, z2, v_s):
        return v_s, STRAIGHT
    lo, hi = v_s, geom.g_max
    r_lo, _, im_lo = corner_residual(geom, z1, z2, tau, lo)
    if im_lo > 1e-8:
        # the corner is out of reach at the starting level
        return _fallback(geom, z1, z2, tau, v_s)
    if r_lo <= tol:
        return v_s, STRAIGHT
    # the residual need not be monotone in v: bracket its first sign change
    for v_try in np.linspace(lo, hi, 65)[1:]:
        r_try, _, _ = corner_residual(geom, z1, z2, tau, float(v_try))
        if r_try <= 0.0:
            hi = float(v_try)
            break
    else:
        return geom.g_max, UNREACHED
    v, r = lo, r_lo
    for _ in range(max_iter):
        r, dr, im = corner_residual(geom, z1, z2, tau, v)
        if abs(r) <= tol:
            break
        if r > 0.0:
            lo = v
        else:
            hi = v
        step = v - r / dr if dr != 0.0 else math.nan
        v = step if lo < step < hi else 0.5 * (lo + hi)
    else:
        raise NewtonError("Newton iteration did not converge", r)
    if im > 1e-8:
        # the continued residual vanished on complex reaching times: re-solve
        # on the real feasibility predicate
        return _fallback(geom, z1, z2, tau, v_s)
    if not straight_blocked(geom, z1, z2, v):
        v = _bisect_feasible(geom, z1, z2, tau, v_s, v)
    return v, TWO_SEGMENT


def _reduce(X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return X[:, 0], np.linalg.norm(X[:, 1:], axis=1)


def appendix_value(t, X, geom: ObstacleGeometry, return_branch: bool = False,
                   on_error: str = "raise"):
    """Exact value ``v(t, x)`` for each row of ``X``.

    With ``on_error="mark"`` Newton failures yield ``nan`` and the branch
    ``"newton-failed"`` instead of raising.
    """
    z1, z2 = _reduce(X)
    tau = np.broadcast_to(geom.T - np.asarray(t, dtype=np.float64), z1.shape)
    if np.any(tau < -1e-12):
        raise ValueError("t must lie in [0, T]")
    vals = np.empty(len(z1))
    branches = []
    for i in range(len(z1)):
        try:
            vals[i], br = appendix_point(geom, float(z1[i]), float(z2[i]), max(float(tau[i]), 0.0))
        except NewtonError:
            if on_error != "mark":
                raise
            vals[i], br = math.nan, "newton-failed"
        branches.append(br)
    return (vals, branches) if return_branch else vals


# -------------------------------------------------------- brute-force oracle


def _first_real_roots(A, B, C):
    """Vectorised smallest non-negative real root; ``inf`` where none exists."""
    B = np.asarray(B, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    D = B * B - 4.0 * A * C
    ok = D >= 0.0
    sq = np.sqrt(np.where(ok, D, 0.0))
    r1, r2 = (-B - sq) / (2.0 * A), (-B + sq) / (2.0 * A)
    lo, hi = np.minimum(r1, r2), np.maximum(r1, r2)
    s = np.where(lo >= 0.0, lo, hi)
    return np.where(ok & (s >= 0.0), s, np.inf)


def bruteforce_point(geom: ObstacleGeometry, z1: float, z2: float, tau: float,
                     n_positions: int = 10_000, iters: int = 60) -> tuple[float, str]:
    """Value by exhaustive search over crossing points of the door exit.

    For a point behind the wall every admissible path crosses the exit plane
    ``x_1 = exit_x(v)`` inside the door.  The minimal time through each of
    ``n_positions`` crossing points is the sum of two straight legs; a level
    ``v`` is feasible when the best crossing needs at most ``tau``.  The
    value is the smallest feasible level, located by bisection.
    """
    b, c = geom.b, geom.c
    A = b * b - c * c
    u = np.linspace(-1.0, 1.0, n_positions)

    def best_time(v):
        y1 = geom.exit_x(v)
        y2 = geom.door_radius(v) * u
        rho = v - geom.alpha_min
        t2 = _first_real_roots(A, -2.0 * b * (z1 - y1), (z1 - y1) ** 2 + (z2 - y2) ** 2)
        t1 = _first_real_roots(A, -2.0 * (b * y1 + c * rho), y1 * y1 + y2 * y2 - rho * rho)
        return float(np.min(t1 + t2))

    def corner_time(v):
        y1, y2 = geom.exit_x(v), geom.door_radius(v)
        rho = v - geom.alpha_min
        t2 = _first_real_roots(A, -2.0 * b * (z1 - y1), (z1 - y1) ** 2 + (z2 - y2) ** 2)
        t1 = _first_real_roots(A, -2.0 * (b * y1 + c * rho), y1 * y1 + y2 * y2 - rho * rho)
        return float(t1 + t2)

    def feasible(v):
        return not geom.in_shadow(z1, z2, v) or best_time(v) <= tau + 1e-9

    v_s = max(geom.unobstructed(z1, z2, tau), float(geom.g2(z1, z2)))
    if tau <= 0.0 or feasible(v_s):
        return v_s, STRAIGHT
    lo, hi = v_s, geom.g_max
    if not feasible(hi - 1e-12):
        return geom.g_max, UNREACHED
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    if hi - v_s <= 1e-6:
        # below the resolution of the crossing grid
        return v_s, STRAIGHT
    # the corner itself out of reach means the bend point is not a corner
    return hi, (TWO_SEGMENT if corner_time(hi) < np.inf else UNREACHED)


def appendix_value_bruteforce(t, X, geom: ObstacleGeometry, n_positions: int = 10_000,
                              return_branch: bool = False):
    z1, z2 = _reduce(X)
    tau = np.broadcast_to(geom.T - np.asarray(t, dtype=np.float64), z1.shape)
    out = [bruteforce_point(geom, float(a), float(r), max(float(s), 0.0), n_positions)
           for a, r, s in zip(z1, z2, tau)]
    vals = np.array([o[0] for o in out])
    return (vals, [o[1] for o in out]) if return_branch else vals


# ------------------------------------------------------------------ problem


def make_eikonal_advection(d: int = 2, drift_regime: str = "large",
                           geometry: ObstacleGeometry | None = None) -> ProblemSpec:
    if d < 2:
        raise ValueError("the eikonal-advection benchmark needs d >= 2")
    if geometry is None:
        if drift_regime == "large":
            geometry = ObstacleGeometry.large_drift()
        elif drift_regime == "small":
            geometry = ObstacleGeometry.small_drift()
        else:
            raise ValueError("drift_regime must be 'large' or 'small'")
    geom = geometry
    drift = np.zeros(d)
    drift[0] = -geom.b

    def f(x, a):
        return ad.sub(drift, ad.mul(geom.c, a))

    def g(x):
        wall = ad.sub(geom.g_max, ad.mul(geom.c_e, ad.abs(ad.sub(x[:, 0], geom.g_c))))
        door = ad.add(ad.mul(geom.c_x, ad.norm(x[:, 1:], axis=-1)), geom.g_min)
        return ad.minimum(wall, door)

    def phi(x):
        return ad.add(ad.norm(x, axis=-1), geom.alpha_min)

    lo = np.full(d, -4.0)
    hi = np.full(d, 4.0)
    lo[0], hi[0] = -2.0, 8.0
    return ProblemSpec(
        name=f"eikadv-{drift_regime}",
        d=d,
        T=geom.T,
        f=f,
        g=g,
        phi=phi,
        control_dim=d,
        control_map=OutputMap.ball(1.0),
        sampling_box=(lo, hi),
        oracle=lambda t, X: appendix_value(t, X, geom),
        plane_extent=(-2.0, 8.0, -4.0, 4.0),
        control_grid=sphere_directions if d == 2 else None,
        params={"geometry": geom.__dict__.copy()},
    )
