"""Behaviour that is real but easy to mistake for a bug.

Each test pins a limitation so a future change that silently "fixes" or
worsens it shows up.
"""
import dataclasses
import math

import numpy as np
import pytest

from setiss import dde as D
from setiss import gains as G
from setiss import razumikhin as R
from setiss import sets as S
from setiss import systems as Y
from setiss.dde import DelaySystem
from setiss.sets import HistoryWindow

OSC = Y.OscillatorParams()
SLP = Y.StuartLandauParams()


@pytest.fixture(scope="module")
def sl_cert():
    return Y.stuart_landau_certificate(SLP)


def _boundary_inputs(cert, d, shrink=1e-6):
    ch = {c.name: c for c in cert.channels}
    return {name: float(G.invert(c.gain, d)) * (1 - shrink) for name, c in ch.items()}


def test_sl_decay_fails_with_inward_boundary_inputs(sl_cert):
    sys = sl_cert.extras["theta_system"]
    hits = []
    for r in np.linspace(0.5, 1.1, 121):
        x = np.array([r, 0.0])
        d = float(sl_cert.set.distance(x[None])[0])
        mag = _boundary_inputs(sl_cert, d)
        w = np.array([-mag["u"], 0.0, -mag["theta"], 0.0])
        out = R.recheck_counterexample(sl_cert, sys, {"x": x, "x_d": x, "w": w})
        assert out["premise"]
        if out["excess"] > 0:
            hits.append((r, out["excess"]))
    rs = [r for r, _ in hits]
    assert 0.62 < min(rs) < 0.64 and 0.96 < max(rs) < 0.98
    r_worst, excess = max(hits, key=lambda h: h[1])
    assert abs(r_worst - 0.70) < 0.01 and excess > 0.05


def test_oscillator_unstructured_theta_is_falsifiable():
    cert = Y.oscillator_certificate(OSC)
    mu, k = OSC.mu, OSC.k

    def rhs(t, x, xd, w):
        out = np.empty(np.broadcast_shapes(x.shape, xd.shape))
        out[..., 0] = x[..., 1] + w[..., 0]
        out[..., 1] = -k(x[..., 0]) - mu * x[..., 1] + w[..., 1] + w[..., 2]
        return out

    sys = DelaySystem(rhs, 0.0, 2, 3, "oscillator_theta_free")
    channels = (R.InputChannel("theta", (0, 1), cert.extras["gamma_theta"]),
                R.InputChannel("w", (2,), cert.extras["gamma"]))
    loose = dataclasses.replace(cert, channels=channels)
    out = R.recheck_counterexample(loose, sys, {"x": [0.01, 0.0], "x_d": [0.01, 0.0],
                                               "w": [2e-5, 0.0, 0.0]})
    assert out["premise"] and out["vdot"] > 0 and out["excess"] > 0


def test_sl_V_not_sandwiched_at_origin(sl_cert):
    origin = np.zeros((1, 2))
    assert sl_cert.set.distance(origin)[0] == 0.0
    assert sl_cert.V(origin)[0] == pytest.approx(SLP.alpha ** 2 / (4 * SLP.nu_R))
    assert G.evaluate(sl_cert.alpha2, 0.0) == 0.0


def test_sl_distance_jumps_at_seam():
    A = S.stuart_landau_set(1.0)
    eps = 1e-12
    below = A.distance(np.array([[0.7 - eps, 0.0]]))[0]
    above = A.distance(np.array([[0.7 + eps, 0.0]]))[0]
    assert below == pytest.approx(0.7)
    assert above == pytest.approx(math.sqrt(0.51))


def test_cubic_oscillator_decays_slower_than_claimed():
    sys = Y.oscillator_system(OSC, delay=0.0)
    hist = HistoryWindow.constant([1.0, 1.0], 0.0)
    ref = D.integrate(sys, hist, None, 60.0, 2.5e-4)(60.0)
    run = D.integrate(sys, hist, None, 60.0, 1e-3)(60.0)
    np.testing.assert_allclose(run, ref, atol=1e-10)
    assert np.linalg.norm(ref) == pytest.approx(0.0478, abs=5e-4)


def test_gamma_theta_root_branch_dominates_near_zero():
    g = Y.oscillator_certificate(OSC).extras["gamma_theta"]
    quart, root, lin = g.args
    for s in (1e-8, 1e-6, 1e-4):
        assert G.evaluate(root, s) > G.evaluate(lin, s) > G.evaluate(quart, s)
        assert G.evaluate(g, s) == G.evaluate(root, s)
