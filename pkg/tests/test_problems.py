import math

import numpy as np
import pytest

from dpfront.problems import (
    PROBLEM_NAMES,
    eikonal_value,
    make_eikonal,
    make_problem,
    make_rotation,
    rotation_value,
    sphere_directions,
)
from dpfront.problems.rotation import HORIZON


def test_registry():
    for name in PROBLEM_NAMES:
        pr = make_problem(name, 2)
        assert pr.d == 2 and pr.oracle is not None
    with pytest.raises(ValueError):
        make_problem("advection")
    with pytest.raises(ValueError):
        make_problem("rotation", 3)


def test_rotation_data():
    pr = make_rotation()
    assert pr.phi(np.array([[1.0, 0.0]]))[0] == -0.5
    assert pr.g(np.array([[0.0, 1.0]]))[0] == 0.25
    assert np.allclose(pr.f(np.array([[1.0, 0.0]]), np.array([[1.0]])), [[0.0, 2 * math.pi]])
    assert pr.T == 0.4 and pr.has_obstacle


def test_rotation_oracle_at_target_centre():
    for t in (0.0, 0.1, 0.4):
        assert rotation_value(t, [[1.0, 0.0]])[0] == pytest.approx(-0.5, abs=1e-12)


def test_rotation_oracle_terminal(rng):
    pr = make_rotation()
    x = rng.uniform(-2, 2, size=(50, 2))
    assert np.allclose(rotation_value(HORIZON, x), pr.terminal(x), atol=1e-12)


def test_rotation_oracle_self_convergence(rng):
    x = rng.uniform(-2, 2, size=(300, 2))
    a = rotation_value(0.0, x, n_samples=4096)
    b = rotation_value(0.0, x, n_samples=8192)
    assert np.max(np.abs(a - b)) <= 1e-3


def test_rotation_oracle_bounds(rng):
    pr = make_rotation()
    x = rng.uniform(-2, 2, size=(200, 2))
    v = rotation_value(0.0, x)
    # staying put is admissible; the obstacle value at the start is a lower bound
    assert np.all(v <= pr.terminal(x) + 1e-12)
    assert np.all(v >= pr.g(x) - 1e-12)


def test_rotation_oracle_is_nonincreasing_in_horizon(rng):
    x = rng.uniform(-2, 2, size=(200, 2))
    assert np.all(rotation_value(0.0, x) <= rotation_value(0.2, x) + 1e-12)


def test_eikonal_data():
    pr = make_eikonal(3)
    assert pr.g is None and pr.T == 1.0
    assert pr.control_map.kind == "ball"
    assert eikonal_value(1.0, [[1.0, 0.0, 0.0]])[0] == -0.5
    assert eikonal_value(0.0, [[0.0, 0.0, 0.0]])[0] == -0.5
    with pytest.raises(ValueError):
        make_eikonal(1)


def test_eikonal_semigroup(rng):
    x = rng.uniform(-3, 3, size=(300, 2))
    s, t = 0.1, 0.3
    U = sphere_directions(64)
    best = np.min([eikonal_value(t + s, x + s * u) for u in U], axis=0)
    assert np.max(np.abs(best - eikonal_value(t, x))) <= 1e-2


def test_lipschitz_on_box(rng):
    for name in PROBLEM_NAMES:
        pr = make_problem(name, 2)
        lo, hi = pr.sampling_box
        x = rng.uniform(lo, hi, size=(500, 2))
        y = x + rng.normal(scale=1e-3, size=x.shape)
        dist = np.linalg.norm(x - y, axis=1)
        for fn in (pr.phi, pr.g) if pr.g is not None else (pr.phi,):
            assert np.max(np.abs(fn(x) - fn(y)) / dist) <= 5.0
        a = np.zeros((500, pr.control_dim))
        assert np.max(np.linalg.norm(pr.f(x, a) - pr.f(y, a), axis=1) / dist) <= 10.0


def test_sampling_box(rng):
    pr = make_problem("eikadv-large", 3)
    X = pr.sample(rng, 1000)
    lo, hi = pr.sampling_box
    assert np.all(X >= lo) and np.all(X <= hi)
    assert list(lo) == [-2, -4, -4] and list(hi) == [8, 4, 4]
