import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpfront import autodiff as ad
from dpfront.nn import init_net


def _grad(fn, *values):
    tape = ad.Tape()
    vs = [tape.variable(v) for v in values]
    out = fn(*vs)
    return out, tape.gradient(out, vs)


def _fd(fn, values, i, eps=1e-6):
    base = [np.array(v, dtype=float) for v in values]
    g = np.zeros_like(base[i])
    for idx in np.ndindex(base[i].shape):
        up = [b.copy() for b in base]
        dn = [b.copy() for b in base]
        up[i][idx] += eps
        dn[i][idx] -= eps
        g[idx] = (float(ad.value_of(fn(*up))) - float(ad.value_of(fn(*dn)))) / (2 * eps)
    return g


def test_square_gradient():
    tape = ad.Tape()
    x = tape.variable(3.0)
    y = tape.record("*", x, x)
    assert tape.gradient(y, [x])[0] == pytest.approx(6.0)


def test_max_routes_to_larger():
    _, (ga, gb) = _grad(lambda a, b: ad.maximum(a, b), 2.0, 5.0)
    assert (float(ga), float(gb)) == (0.0, 1.0)


def test_ties_go_to_first_argument():
    _, (ga, gb) = _grad(lambda a, b: ad.maximum(a, b), 1.0, 1.0)
    assert (float(ga), float(gb)) == (1.0, 0.0)
    _, (ga, gb) = _grad(lambda a, b: ad.minimum(a, b), 1.0, 1.0)
    assert (float(ga), float(gb)) == (1.0, 0.0)


@pytest.mark.parametrize("op", ["relu", "abs"])
def test_kink_conventions(op):
    _, (g,) = _grad(getattr(ad, op), 0.0)
    assert float(g) == 0.0


def test_linear_gradient():
    _, (g,) = _grad(lambda t: ad.mul(t, 4.0), 1.7)
    assert float(g) == 4.0


def test_off_path_parameter_gets_zero():
    tape = ad.Tape()
    a, b = tape.variable(np.ones(3)), tape.variable(np.ones(2))
    out = ad.sum(ad.mul(a, 2.0))
    ga, gb = tape.gradient(out, [a, b])
    assert np.all(ga == 2.0) and np.all(gb == 0.0)


def test_output_must_be_on_tape():
    t1, t2 = ad.Tape(), ad.Tape()
    x = t1.variable(1.0)
    y = t2.variable(2.0)
    with pytest.raises(ad.AutodiffError):
        t1.gradient(y, [x])
    with pytest.raises(ad.AutodiffError):
        t1.gradient(np.float64(1.0), [x])


def test_non_scalar_output_rejected():
    tape = ad.Tape()
    x = tape.variable(np.ones(3))
    with pytest.raises(ad.AutodiffError):
        tape.gradient(ad.mul(x, 2.0), [x])


def test_domain_errors():
    tape = ad.Tape()
    x = tape.variable(np.array([1.0, -1.0]))
    with pytest.raises(ad.DomainError):
        ad.sqrt(x)
    with pytest.raises(ad.DomainError):
        ad.div(1.0, ad.sub(x, x))


def test_non_finite_is_an_error():
    tape = ad.Tape()
    x = tape.variable(1e308)
    with pytest.raises(ad.NonFiniteError):
        ad.mul(x, 1e10)


def test_mixed_tapes_rejected():
    x = ad.Tape().variable(1.0)
    y = ad.Tape().variable(2.0)
    with pytest.raises(ad.AutodiffError):
        ad.add(x, y)


def test_plain_arrays_pass_through():
    out = ad.maximum(np.array([1.0, 3.0]), 2.0)
    assert isinstance(out, np.ndarray) and list(out) == [2.0, 3.0]


def test_tape_is_topologically_ordered():
    tape = ad.Tape()
    x = tape.variable(np.ones(4))
    y = ad.tanh(ad.mul(x, 0.3))
    ad.sum(ad.maximum(y, 0.1))
    for k, node in enumerate(tape.nodes):
        assert all(p < k for p in node.parents)


def test_mean_of_max_routes_per_sample():
    g = np.array([0.0, 2.0, -1.0])
    tape = ad.Tape()
    v = tape.variable(np.array([1.0, 1.0, 1.0]))
    gv = tape.variable(g)
    out = ad.mean(ad.maximum(gv, v))
    dg, dv = tape.gradient(out, [gv, v])
    assert np.allclose(dg, [0.0, 1 / 3, 0.0]) and np.allclose(dv, [1 / 3, 0.0, 1 / 3])
    assert np.allclose(dg + dv, 1 / 3)


UNARY = {
    "relu": ad.relu, "sigmoid": ad.sigmoid, "tanh": ad.tanh, "abs": ad.abs,
    "sqrt": lambda x: ad.sqrt(ad.add(ad.mul(x, x), 0.5)), "neg": ad.neg,
}


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(UNARY)), st.lists(st.floats(-3, 3), min_size=1, max_size=5))
def test_unary_against_finite_differences(name, xs):
    x = np.array(xs)
    if name in ("relu", "abs"):
        x = np.where(np.abs(x) < 1e-3, 1e-3 + np.abs(x), x)
    fn = lambda v: ad.sum(ad.mul(UNARY[name](v), np.arange(1, len(xs) + 1.0)))  # noqa: E731
    _, (g,) = _grad(fn, x)
    fd = _fd(fn, [x], 0)
    assert np.allclose(g, fd, rtol=1e-4, atol=1e-7)


BINARY = {
    "add": ad.add, "sub": ad.sub, "mul": ad.mul, "maximum": ad.maximum, "minimum": ad.minimum,
    "div": lambda a, b: ad.div(a, ad.add(ad.mul(b, b), 1.0)),
}


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(BINARY)),
       st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=4))
def test_binary_against_finite_differences(name, pairs):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    if name in ("maximum", "minimum"):
        b = np.where(np.abs(a - b) < 1e-3, a + 0.5, b)
    fn = lambda u, v: ad.sum(ad.mul(BINARY[name](u, v), np.linspace(1, 2, len(pairs))))  # noqa: E731
    _, (ga, gb) = _grad(fn, a, b)
    assert np.allclose(ga, _fd(fn, [a, b], 0), rtol=1e-4, atol=1e-7)
    assert np.allclose(gb, _fd(fn, [a, b], 1), rtol=1e-4, atol=1e-7)


def test_structural_ops_against_finite_differences(rng):
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(2, 4))

    def fn(x, w):
        h = ad.affine(x, w)
        s = ad.stack([h[:, 0], ad.norm(x, axis=1)], axis=1)
        c = ad.concatenate([s, ad.mul(h, h)], axis=1)
        return ad.add(ad.sum(ad.dot(c, c)), ad.mean(x))

    _, (gx, gw) = _grad(fn, x, w)
    assert np.allclose(gx, _fd(fn, [x, w], 0), rtol=1e-4, atol=1e-6)
    assert np.allclose(gw, _fd(fn, [x, w], 1), rtol=1e-4, atol=1e-6)


def test_tanh_network_against_finite_differences(rng):
    net = init_net((2, 6, 6, 6, 1), "tanh", seed=3)
    x = rng.normal(size=(5, 2))

    def loss(*ws):
        return ad.mean(net.forward(x, list(ws)))

    _, grads = _grad(loss, *net.weights)
    for k in range(len(net.weights)):
        fd = _fd(loss, net.weights, k, eps=1e-5)
        err = np.linalg.norm(grads[k] - fd) / max(np.linalg.norm(fd), 1e-12)
        assert err <= 1e-4


def test_linearity_of_gradient(rng):
    x = rng.normal(size=6)
    l1 = lambda v: ad.sum(ad.tanh(v))  # noqa: E731
    l2 = lambda v: ad.sum(ad.mul(v, v))  # noqa: E731
    _, (g1,) = _grad(l1, x)
    _, (g2,) = _grad(l2, x)
    _, (g12,) = _grad(lambda v: ad.add(ad.mul(l1(v), 2.0), ad.mul(l2(v), -3.0)), x)
    assert np.max(np.abs(g12 - (2.0 * g1 - 3.0 * g2))) <= 1e-12


def test_replay_is_bitwise_deterministic(rng):
    net = init_net((2, 8, 1), "relu", seed=1)
    x = rng.normal(size=(10, 2))
    loss = lambda *ws: ad.mean(ad.maximum(net.forward(x, list(ws)), 0.0))  # noqa: E731
    _, g1 = _grad(loss, *net.weights)
    _, g2 = _grad(loss, *net.weights)
    assert all(np.array_equal(a, b) for a, b in zip(g1, g2))
