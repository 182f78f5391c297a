from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import autodiff as ad
from ..dynamics import vee
from ..nn import OutputMap


@dataclass
class ProblemSpec:
    """A finite-horizon control problem with maximum running cost.

    ``f(x, a)``, ``g(x)`` and ``phi(x)`` act on batches (``x`` of shape
    ``(M, d)``, ``a`` of shape ``(M, control_dim)``) and accept tape
    variables.  ``g is None`` means there is no obstacle.  ``oracle(t, X)``,
    when present, returns the exact value ``v(t, x)`` for each row of ``X``.
    """

    name: str
    d: int
    T: float
    f: Callable
    g: Callable | None
    phi: Callable
    control_dim: int
    control_map: OutputMap
    sampling_box: tuple[np.ndarray, np.ndarray]
    oracle: Callable | None = None
    plane: tuple[np.ndarray, np.ndarray] | None = None
    plane_extent: tuple[float, float, float, float] | None = None
    control_grid: Callable | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = (np.asarray(b, dtype=np.float64) for b in self.sampling_box)
        if lo.shape != (self.d,) or hi.shape != (self.d,) or np.any(hi <= lo):
            raise ValueError("sampling_box must be two length-d arrays with lo < hi")
        self.sampling_box = (lo, hi)
        if self.plane is None:
            e = np.eye(self.d)
            self.plane = (e[0], e[1])
        if self.plane_extent is None:
            r = float(max(np.max(np.abs(lo)), np.max(np.abs(hi))))
            self.plane_extent = (-r, r, -r, r)

    @property
    def has_obstacle(self) -> bool:
        return self.g is not None

    def terminal(self, x):
        """``g v phi`` (just ``phi`` when the obstacle is absent)."""
        return vee(None if self.g is None else self.g(x), self.phi(x))

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        lo, hi = self.sampling_box
        return rng.uniform(lo, hi, size=(m, self.d))

    def value(self, t: float, X) -> np.ndarray:
        if self.oracle is None:
            raise ValueError(f"problem {self.name!r} has no exact-value oracle")
        return self.oracle(t, np.atleast_2d(np.asarray(X, dtype=np.float64)))


def dist(x, center):
    return ad.norm(ad.sub(x, center), axis=-1)


def sphere_directions(n: int) -> np.ndarray:
    """``n`` equally spaced unit vectors in the plane."""
    th = 2.0 * np.pi * np.arange(n) / n
    return np.stack([np.cos(th), np.sin(th)], axis=1)
