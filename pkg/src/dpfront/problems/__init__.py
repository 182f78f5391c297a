"""Benchmark problems and their exact-value oracles."""

from .base import ProblemSpec, sphere_directions
from .eikadv import (
    NewtonError,
    ObstacleGeometry,
    appendix_value,
    appendix_value_bruteforce,
    make_eikonal_advection,
)
from .eikonal import eikonal_value, make_eikonal
from .rotation import make_rotation, rotation_value

PROBLEM_NAMES = ("rotation", "eikonal", "eikadv-large", "eikadv-small")


def make_problem(name: str, d: int = 2) -> ProblemSpec:
    """Build a benchmark by its config name."""
    if name == "rotation":
        if d != 2:
            raise ValueError("the rotation benchmark is two-dimensional")
        return make_rotation()
    if name == "eikonal":
        return make_eikonal(d)
    if name == "eikadv-large":
        return make_eikonal_advection(d, "large")
    if name == "eikadv-small":
        return make_eikonal_advection(d, "small")
    raise ValueError(f"unknown problem {name!r}; choose from {', '.join(PROBLEM_NAMES)}")


__all__ = [
    "PROBLEM_NAMES",
    "NewtonError",
    "ObstacleGeometry",
    "ProblemSpec",
    "appendix_value",
    "appendix_value_bruteforce",
    "eikonal_value",
    "make_eikonal",
    "make_eikonal_advection",
    "make_problem",
    "make_rotation",
    "rotation_value",
    "sphere_directions",
]
