"""Explicit Runge-Kutta one-step maps, frozen-control sub-step rollouts and
maximum-running-cost trajectory functionals.

All functions take batches: states ``x`` of shape ``(M, d)`` and controls
``a`` of shape ``(M, k)``.  Inputs may be tape variables, in which case the
computation is recorded and gradients flow into the control.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients ``(B, c)`` of a ``q``-stage Runge-Kutta map."""

    name: str
    B: tuple[tuple[float, ...], ...]
    c: tuple[float, ...]

    def __post_init__(self):
        q = len(self.c)
        if q < 1 or len(self.B) != q or any(len(row) != q for row in self.B):
            raise ValueError("B must be q x q with q = len(c) >= 1")
        if not self.explicit:
            raise ValueError(f"tableau {self.name!r} is implicit; only explicit schemes are supported")

    @property
    def q(self) -> int:
        return len(self.c)

    @property
    def explicit(self) -> bool:
        return all(self.B[i][j] == 0.0 for i in range(self.q) for j in range(i, self.q))

    @property
    def consistent(self) -> bool:
        return abs(sum(self.c) - 1.0) < 1e-14

    @property
    def c_l1(self) -> float:
        return float(sum(abs(ci) for ci in self.c))


EULER = ButcherTableau("euler", ((0.0,),), (1.0,))
HEUN = ButcherTableau("heun", ((0.0, 0.0), (1.0, 0.0)), (0.5, 0.5))
RK4 = ButcherTableau(
    "rk4",
    ((0.0, 0.0, 0.0, 0.0), (0.5, 0.0, 0.0, 0.0), (0.0, 0.5, 0.0, 0.0), (0.0, 0.0, 1.0, 0.0)),
    (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0),
)
TABLEAUX = {t.name: t for t in (EULER, HEUN, RK4)}


def get_tableau(name: str | ButcherTableau) -> ButcherTableau:
    if isinstance(name, ButcherTableau):
        return name
    try:
        return TABLEAUX[name.lower()]
    except KeyError:
        raise ValueError(f"unknown tableau {name!r}; choose from {sorted(TABLEAUX)}") from None


def rk_step(tab: ButcherTableau, f: Callable, x, a, h: float):
    """``F_h(x, a) = x + h * sum_i c_i f(y_i, a)`` with explicit stages."""
    if not h > 0:
        raise ValueError("step size must be positive")
    ks = []
    for i in range(tab.q):
        y = x
        for j in range(i):
            bij = tab.B[i][j]
            if bij != 0.0:
                y = ad.add(y, ad.mul(h * bij, ks[j]))
        ks.append(f(y, a))
    incr = None
    for ci, k in zip(tab.c, ks):
        if ci == 0.0:
            continue
        term = ad.mul(h * ci, k)
        incr = term if incr is None else ad.add(incr, term)
    return x if incr is None else ad.add(x, incr)


@dataclass
class RolloutRecord:
    """Sub-states ``Y_0 .. Y_p`` of a rollout under the control ``a`` frozen at ``Y_0``."""

    states: list
    control: object
    h: float

    @property
    def p(self) -> int:
        return len(self.states) - 1

    @property
    def end(self):
        return self.states[-1]


def substep_rollout(tab: ButcherTableau, f: Callable, x, a, p: int, dt: float) -> RolloutRecord:
    if p < 1:
        raise ValueError("p must be >= 1")
    h = dt / p
    states = [x]
    for _ in range(p):
        states.append(rk_step(tab, f, states[-1], a, h))
    return RolloutRecord(states, a, h)


def running_max_G(rec: RolloutRecord, g: Callable | None):
    """``max_{0 <= j < p} g(Y_j)`` (endpoint excluded); ``None`` when there is no obstacle."""
    if g is None:
        return None
    out = g(rec.states[0])
    for y in rec.states[1:-1]:
        out = ad.maximum(out, g(y))
    return out


def coarse_step(tab: ButcherTableau, f: Callable, g: Callable | None, x, a, p: int, dt: float):
    """Return ``(F(x, a), G^a(x))`` without keeping the intermediate states."""
    h = dt / p
    G = None if g is None else g(x)
    y = x
    for j in range(p):
        y = rk_step(tab, f, y, a, h)
        if g is not None and j < p - 1:
            G = ad.maximum(G, g(y))
    return y, G


def vee(a, b):
    """``a v b`` where ``None`` stands for an absent (``-inf``) term."""
    if a is None:
        return b
    if b is None:
        return a
    return ad.maximum(a, b)


def _control_value(control, x, m: int):
    """A control is a callable feedback ``x -> a`` or a fixed value broadcast to the batch."""
    if callable(control):
        return control(x)
    a = np.asarray(control, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    return np.broadcast_to(a, (m, a.shape[-1]))


def trajectory_cost_J(problem, x, controls: Sequence, n: int, N: int, p: int,
                      tableau: ButcherTableau | str = "heun"):
    """``J_n(x, (a_n .. a_{N-1}))``: running max of ``G^{a_k}(X_k)`` and ``(g v phi)(X_N)``.

    ``controls[k - n]`` is used at step ``k``.  ``x`` is a batch ``(M, d)``;
    returns shape ``(M,)``.
    """
    if not 0 <= n <= N:
        raise ValueError("need 0 <= n <= N")
    if len(controls) != N - n:
        raise ValueError(f"expected {N - n} controls, got {len(controls)}")
    tab = get_tableau(tableau)
    dt = problem.T / N
    m = len(x)
    acc = None
    for ctrl in controls:
        a = _control_value(ctrl, x, m)
        x, G = coarse_step(tab, problem.f, problem.g, x, a, p, dt)
        acc = vee(acc, G)
    return vee(acc, problem.terminal(x))
