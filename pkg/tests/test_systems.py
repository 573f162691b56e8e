import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from setiss import gains as G
from setiss import razumikhin as R
from setiss import systems as Y
from setiss.sampling import SobolSampler, box

OSC = Y.OscillatorParams()
SLP = Y.StuartLandauParams()
Z1 = np.zeros(1)
Z2 = np.zeros(2)


def test_oscillator_rhs_examples():
    f = Y.oscillator_system(OSC, delayed=False).rhs
    np.testing.assert_array_equal(f(0.0, Z2, Z2, Z1), [0.0, 0.0])
    np.testing.assert_allclose(f(0.0, np.array([1.0, 2.0]), np.array([5.0, 5.0]), Z1), [2.0, -3.0])
    g = Y.oscillator_system(OSC, delayed=True).rhs
    x = np.array([0.3, -0.7])
    np.testing.assert_array_equal(g(0.0, x, x, Z1), f(0.0, x, x, Z1))


def test_oscillator_V_and_gain():
    V, grad = Y.oscillator_V(OSC)
    assert V(np.zeros(2)) == 0.0
    assert V(np.array([1.0, 1.0])) == pytest.approx(3.0)
    x = np.array([0.4, -1.3])
    fd = [(V(x + e * 1e-6) - V(x - e * 1e-6)) / 2e-6 for e in np.eye(2)]
    np.testing.assert_allclose(grad(x), fd, rtol=1e-6)
    g = Y.oscillator_gain(OSC)
    first, second = 0.8 * math.sqrt(5), math.sqrt(1.25) * 0.4 ** (1 / 3)
    assert G.evaluate(g, 0.1) == pytest.approx(max(first, second), rel=1e-12)
    assert first > second


def test_oscillator_alpha3_near_three_sixteenths():
    a3 = Y.oscillator_alpha3(OSC)
    c = G.evaluate(a3, 1.0)
    assert 0.99 * 0.18 < c <= 3 / 16


def test_sl_rhs_examples():
    f = Y.stuart_landau_system(SLP, delayed=False).rhs
    np.testing.assert_array_equal(f(0.0, Z2, Z2, Z2), [0.0, 0.0])
    np.testing.assert_allclose(f(0.0, np.array([2.0, 0.0]), Z2, Z2), [-6.0, 0.0])
    z = np.array([0.6, 0.8])
    rdot = np.dot(z, f(0.0, z, z, Z2))
    assert abs(rdot) <= 1e-15


def test_sl_V_and_gain():
    V, _ = Y.stuart_landau_V(SLP)
    assert V(np.array([0.0, 1.0])) == 0.0
    assert V(np.array([math.sqrt(2), 0.0])) == pytest.approx(0.25)
    g = Y.stuart_landau_gain(SLP)
    want = G.invert(G.c3(1.0), 1.96)
    assert G.evaluate(g, 0.7) == pytest.approx(want, rel=1e-10)
    assert G.evaluate(G.c3(1.0), G.evaluate(g, 0.7)) == pytest.approx(1.96, rel=1e-10)


@pytest.mark.parametrize("fn, bounds, want", [
    (lambda r: r ** 3, [(-2, 2)], 13.2),
    (lambda r: -2.5 * r, [(-1, 1)], 2.75),
    (lambda r: 0 * r, [(-1, 1)], 0.0),
])
def test_lipschitz_examples(fn, bounds, want):
    assert Y.lipschitz_estimate(fn, bounds) == pytest.approx(want, rel=1e-6, abs=1e-12)


def test_default_L_values():
    assert OSC.L == pytest.approx(13.2, rel=1e-6)
    assert SLP.L > 0


@given(st.floats(0.0, 100.0, allow_subnormal=False), st.floats(0.0, 100.0, allow_subnormal=False))
def test_gamma2_linear(c, r):
    g = Y.oscillator_gamma2(OSC)
    assert G.evaluate(g, c * r) == pytest.approx(c * G.evaluate(g, r), rel=1e-15, abs=0)


def test_oscillator_gamma1_is_sup():
    g = Y.oscillator_gamma1(OSC)
    r = 0.8
    l1, l2 = np.meshgrid(np.linspace(-r, r, 201), np.linspace(-r, r, 201))
    brute = np.max(10 * OSC.L * np.abs(l1 ** 3 + l2))
    assert G.evaluate(g, r) == pytest.approx(brute, rel=1e-12)


def test_sl_gamma1_matches_brute_force():
    A = Y.stuart_landau_set(SLP.alpha)
    q = np.linspace(0, 4, 40001)
    pts = np.column_stack([np.sqrt(q), np.zeros_like(q)])
    k = np.linalg.norm(SLP.feedback(pts), axis=1)
    d = A.distance(pts)
    for r in (0.1, 0.5, 0.69, 0.75, 1.2):
        brute = 10 * SLP.L * np.max(k[d <= r])
        assert Y.stuart_landau_gamma1_value(r, L=SLP.L) == pytest.approx(brute, rel=1e-3)


def test_certificates_pass_sandwich():
    osc = Y.oscillator_certificate()
    samp = SobolSampler([box("x", [-3, -3], [3, 3])], 5)
    assert R.check_sandwich(osc, samp, 20_000).passed
    sl = Y.stuart_landau_certificate()
    assert R.check_sandwich(sl, Y.annulus_sampler(0.7, 3.0, seed=5), 20_000).passed


def test_falsify_small_budget():
    cert = Y.oscillator_certificate()
    v = R.falsify_theorem2(cert, cert.extras["theta_system"], Y.oscillator_sampler(OSC), 8192)
    assert v.passed and v.premise_hits > 100
