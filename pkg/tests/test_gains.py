import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from setiss import gains as G


def test_eval_identity_and_c3():
    assert G.evaluate(G.identity(), 0.0) == 0.0
    assert G.evaluate(G.c3(1.0), 1.0) == pytest.approx(0.49, rel=1e-15)


def test_oscillator_gamma_first_branch():
    g = G.oscillator_gamma(1.0, G.power(3))
    assert G.evaluate(g, 0.1) == pytest.approx(0.8 * math.sqrt(5), rel=1e-12)


@pytest.mark.parametrize("f, y, want", [
    (G.identity(), 3.5, 3.5),
    (G.power(3), 8.0, 2.0),
    (G.c3(1.0), 0.49, 1.0),
])
def test_invert_examples(f, y, want):
    s = G.invert(f, y)
    assert s == pytest.approx(want, rel=1e-10)
    assert abs(G.evaluate(f, s) - y) <= 1e-10 * max(1.0, y)


def test_invert_rejects_flat_and_bounded():
    with pytest.raises(G.NotStrictlyIncreasing):
        G.invert(G.zero(), 1.0)
    bounded = G.user(lambda s: s / (1 + s), class_tag="K")
    with pytest.raises(G.OutOfRange):
        G.invert(bounded, 2.0)


def test_domain_errors():
    with pytest.raises(G.DomainError):
        G.evaluate(G.identity(), -1.0)
    capped = G.user(lambda s: s, class_tag="K", s_max=1.0)
    with pytest.raises(G.DomainError):
        G.evaluate(capped, 2.0)


def test_compose_max_scale_arg():
    f = G.power(2)
    grid = np.linspace(0, 5, 100)
    np.testing.assert_array_equal(G.evaluate(G.compose(G.identity(), f), grid), G.evaluate(f, grid))
    m = G.max_of(G.affine(2.0), G.power(2))
    assert G.evaluate(m, 1.0) == 2.0
    assert G.evaluate(m, 3.0) == 9.0
    gamma2 = G.affine(10.0)  # 10 L r with L = 1
    assert G.evaluate(G.scale_arg(gamma2, 0.1), 1.0) == pytest.approx(1.0)


def test_compose_domain_mismatch():
    capped = G.user(lambda s: s, class_tag="K", s_max=1.0)
    with pytest.raises(G.DomainMismatch):
        G.compose(capped, G.power(2))


@pytest.mark.parametrize("f, tag", [
    (G.identity(), "K_inf"),
    (G.user(lambda s: s / (1 + s)), "K"),
    (G.user(lambda s: np.ones_like(s)), "unverified"),
    (G.zero(), "G"),
])
def test_verify_class(f, tag):
    assert G.verify_class(f) == tag


def test_small_gain_examples():
    r = G.small_gain_holds(G.affine(0.5), (0.0, 10.0))
    assert r.holds and r.worst_margin < 1e-5
    r = G.small_gain_holds(G.affine(2.0), (0.0, 1.0))
    assert not r.holds
    r = G.small_gain_holds(G.power(2), (0.5, 2.0))
    assert not r.holds
    assert 1.0 < r.first_failure < 1.001
    with pytest.raises(G.EmptyInterval):
        G.small_gain_holds(G.identity(), (2.0, 1.0))


ROUND_TRIP = {
    "identity": G.identity(),
    "cube": G.power(3),
    "c3": G.c3(1.0),
    "osc_gamma": G.oscillator_gamma(1.0, G.power(3)),
}


@pytest.mark.parametrize("name", list(ROUND_TRIP))
def test_round_trip_1000(name):
    f = ROUND_TRIP[name]
    rng = np.random.default_rng(7)
    ys = 10.0 ** rng.uniform(-6, 6, 1000)
    s = G.invert(f, ys)
    err = np.abs(G.evaluate(f, s) - ys) / np.maximum(1.0, ys)
    assert err.max() <= 1e-9


def test_inverse_node_matches_bisection():
    f = G.sum_of(G.power(2, 0.3), G.power(4, 0.1))
    inv = G.inverse(f)
    ys = np.logspace(-4, 4, 50)
    np.testing.assert_allclose(G.evaluate(inv, ys), G.invert(f, ys), rtol=1e-10)


def test_json_round_trip():
    f = G.max_of(G.compose(G.c3(2.0), G.scale_arg(G.power(2), 3.0)), G.inverse(G.affine(4.0)))
    g = G.from_json(G.to_json(f))
    s = np.logspace(-3, 3, 40)
    np.testing.assert_array_equal(G.evaluate(f, s), G.evaluate(g, s))


def test_kl_envelope_validates():
    G.KLEnvelope(np.array([0.0, 1.0]), np.array([2.0, 1.0]))
    with pytest.raises(ValueError):
        G.KLEnvelope(np.array([0.0, 1.0]), np.array([1.0, 2.0]))


# ---------------------------------------------------------------- properties

coef = st.floats(0.1, 10.0)
expo = st.floats(0.5, 4.0)
k_funcs = st.builds(G.power, expo, coef) | st.builds(G.affine, coef)
args = st.floats(0.0, 50.0)


@given(k_funcs, k_funcs, k_funcs, args)
def test_compose_associative(f, g, h, s):
    a = G.evaluate(G.compose(f, G.compose(g, h)), s)
    b = G.evaluate(G.compose(G.compose(f, g), h), s)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


@settings(max_examples=30, deadline=None)
@given(k_funcs, k_funcs)
def test_class_closure(f, g):
    assert G.verify_class(G.compose(f, g)) in ("K", "K_inf")
    assert G.verify_class(G.max_of(f, g)) in ("K", "K_inf")


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(1.0, 3.0), st.floats(1e-3, 0.5), st.floats(1.5, 20.0))
def test_small_gain_monotone(c, factor, mu, Delta):
    f = G.affine(c)
    g = G.affine(c * factor)
    if G.small_gain_holds(g, (mu, Delta), 256).holds:
        assert G.small_gain_holds(f, (mu, Delta), 256).holds


@settings(max_examples=50, deadline=None)
@given(k_funcs, st.floats(1e-6, 1e6))
def test_round_trip_property(f, y):
    s = G.invert(f, y)
    assert abs(G.evaluate(f, s) - y) <= 1e-9 * max(1.0, y)
