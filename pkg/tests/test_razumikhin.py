import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from setiss import gains as G
from setiss import razumikhin as R
from setiss.dde import DelaySystem, DisturbanceSignal, NonFiniteState, integrate
from setiss.sampling import SobolSampler, box
from setiss.sets import HistoryWindow, HorizonTooShort, origin


def quad_cert(a2=G.power(2), a3=G.power(2), gain_w=G.power(2, 4.0), form=1):
    V = lambda x: np.sum(x * x, axis=-1)
    grad = lambda x: 2 * x
    kw = dict(gain_v=G.zero()) if form == 1 else dict(gain_x=G.zero())
    return R.RazumikhinCertificate(V, G.power(2), a2, a3, origin(1), grad, gain_w=gain_w, **kw)


SCALAR = DelaySystem(lambda t, x, xd, w: -x + w, 0.0, 1, 1, "scalar")


def scalar_sampler(seed=0, w_max=1.0):
    return SobolSampler([box("x", [-5], [5]), box("x_d", [-5], [5]), box("w", [-w_max], [w_max])], seed)


def test_sandwich_examples():
    sampler = SobolSampler([box("x", [-3, -3], [3, 3])], 0)
    V = lambda x: np.sum(x * x, axis=-1)
    ok = R.RazumikhinCertificate(V, G.power(2), G.power(2), G.identity(), origin(2))
    assert R.check_sandwich(ok, sampler, 4096).passed
    bad = R.RazumikhinCertificate(V, G.power(2), G.power(2, 0.5), G.identity(), origin(2))
    v = R.check_sandwich(bad, sampler, 4096)
    assert not v.passed and v.counterexample["dist"] > 0


def test_v_form_scalar_pass_and_fail():
    v = R.falsify_theorem1(quad_cert(), SCALAR, scalar_sampler(), 100_000)
    assert v.passed and v.premise_hits > 1000
    bad = R.falsify_theorem1(quad_cert(a3=G.power(2, 10.0)), SCALAR, scalar_sampler(), 100_000)
    assert not bad.passed
    redo = R.recheck_counterexample(quad_cert(a3=G.power(2, 10.0)), SCALAR, bad.counterexample, form=1)
    assert redo["premise"] and redo["excess"] > 0


def test_v_form_w_free_samples_reduce_to_delay_free():
    v = R.falsify_theorem1(quad_cert(), SCALAR, scalar_sampler(w_max=1e-300), 4096)
    assert v.passed and v.premise_hits >= 4000


def test_wrong_form_and_vacuous_premise():
    with pytest.raises(R.WrongForm):
        R.falsify_theorem2(quad_cert(form=1), SCALAR, scalar_sampler(), 64)
    never = quad_cert(gain_w=G.affine(1e9))
    sampler = SobolSampler([box("x", [-1], [1]), box("w", [0.5], [1.0])], 0)
    with pytest.raises(R.PremiseNeverSampled):
        R.falsify_theorem1(never, SCALAR, sampler, 256)


def test_linear_margin_oracle():
    rep = R.delay_margin(G.affine(2.0), G.affine(5.0), G.identity(), G.identity(), 0.0, 10.0)
    assert rep.status == "converged"
    assert abs(rep.delta_star - 0.1) <= 1e-6


def test_margin_unbounded_and_no_margin():
    rep = R.delay_margin(G.affine(2.0), G.zero(), G.identity(), G.identity(), 0.0, 1.0)
    assert rep.status == "unbounded" and math.isinf(rep.delta_star)
    # a huge alpha2 defeats even a vanishing delay
    rep = R.delay_margin(G.identity(), G.identity(), G.identity(), G.affine(1e20), 0.0, 1.0)
    assert rep.status == "no_margin"
    with pytest.raises(R.NoMargin):
        R.delay_margin(G.identity(), G.identity(), G.identity(), G.affine(1e20), 0.0, 1.0,
                       raise_errors=True)
    assert R.delay_margin(G.identity(), G.identity(), G.identity(), G.identity(), 2.0, 1.0).status \
        == "interval_empty"


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 5.0), st.floats(0.5, 5.0), st.floats(1.0, 4.0))
def test_margin_monotone_in_gains(a, b, factor):
    base = R.delay_margin(G.affine(a), G.power(2, b), G.identity(), G.identity(), 1e-3, 2.0,
                          grid_size=512)
    bigger = R.delay_margin(G.affine(a * factor), G.power(2, b), G.identity(), G.identity(), 1e-3,
                            2.0, grid_size=512)
    assert bigger.delta_star <= base.delta_star * (1 + 1e-6)


def test_u2_gain_examples():
    g = R.lemma_gain_u2(G.identity(), 1.0)
    assert G.evaluate(g, 2.0) == pytest.approx(8.0)
    assert G.evaluate(g, 0.0) == 0.0
    g2 = R.lemma_gain_u2(G.power(2), 1.0)
    assert G.evaluate(g2, 1.0) == pytest.approx(2.0)
    with pytest.raises(R.BadL):
        R.lemma_gain_u2(G.identity(), 0.5)


def test_robustness2_traced_values():
    r = R.robustness2_gains(G.identity(), G.identity(), G.identity(), G.identity())
    assert G.evaluate(r.gamma_v, 1.0) == pytest.approx(16.0)
    assert G.evaluate(r.gamma_u, 0.5) == pytest.approx(8.0)
    assert G.evaluate(r.alpha4, 1.0) == pytest.approx(0.5)
    assert not r.applicable
    z = R.robustness2_gains(G.identity(), G.identity(), G.identity(), G.zero())
    assert G.evaluate(z.gamma_v, 3.0) == 0.0
    assert z.applicable


@pytest.mark.parametrize("psi", [G.identity(), G.power(2),
                                 G.user(np.expm1, class_tag="K_inf", name="expm1")])
def test_b_scaling_bound(psi):
    b = R.construct_b_scaling(psi, 0.1)
    s = np.linspace(0, 20, 10_000)
    vals = b(s)
    assert np.all(vals * (0.5 + G.evaluate(psi, s)) <= 1 + 1e-12)
    assert np.all((vals > 0) & (vals <= 1))
    assert np.all(vals[s <= b.r0] == 1.0)
    beyond = vals[s >= b.r0]
    assert np.all(np.diff(beyond) <= 1e-15)


def test_b_scaling_shrinks_bad_radius():
    with pytest.warns(R.BadRadius):
        b = R.construct_b_scaling(G.identity(), 2.0)
    assert b.status == "radius_shrunk" and b.r0 == pytest.approx(0.25)


def test_fit_power_envelopes_sandwiches():
    rng = np.random.default_rng(0)
    d = rng.uniform(0.01, 3, 5000)
    v = d ** 2 * rng.uniform(1.0, 2.0, d.size)
    lo, hi = R.fit_power_envelopes(d, v, (2,))
    assert np.all(G.evaluate(lo, d) <= v) and np.all(G.evaluate(hi, d) >= v)


def decay_run(w=None, T=20.0, delay=0.1):
    sys = DelaySystem(lambda t, x, xd, ww: -xd + ww, delay, 1, 1, "decay")
    return integrate(sys, HistoryWindow.constant([1.0], delay), w, T, 1e-2)


def test_monitor_unforced_converges():
    v = R.iss_monitor(decay_run(T=40.0), origin(1), G.identity(), 0.0)
    assert v.passed and v.threshold == 1e-6
    assert v.ultimate_bound_observed < 1e-6


def test_monitor_tail_consistency_and_envelope():
    traj = decay_run(DisturbanceSignal.step(0.0, 0.05), T=30.0)
    v = R.iss_monitor(traj, origin(1), G.affine(1.1), 0.05)
    assert v.passed
    assert v.ultimate_bound_observed <= v.threshold
    env = v.envelope
    assert np.all(np.diff(env.bounds) <= 0)


def test_monitor_errors():
    with pytest.raises(HorizonTooShort):
        R.iss_monitor(decay_run(T=1.0), origin(1), G.identity(), 0.0)
    blow = DelaySystem(lambda t, x, xd, w: x * x, 0.0, 1, 1, "blow")
    with pytest.raises(NonFiniteState) as info:
        integrate(blow, HistoryWindow.constant([1.0], 0.0), None, 5.0, 1e-3)
    with pytest.raises(NonFiniteState):
        R.iss_monitor(info.value.trajectory, origin(1), G.identity(), 0.0)


def test_envelope_examples():
    traj = decay_run(T=5.0, delay=0.0)
    env = R.empirical_envelope(traj, origin(1))
    np.testing.assert_allclose(env.bounds, np.abs(traj.states[:, 0]))
    flat = integrate(DelaySystem(lambda t, x, xd, w: 0 * x, 0.0, 1, 1, "flat"),
                     HistoryWindow.constant([0.3], 0.0), None, 2.0, 0.1)
    assert np.all(R.empirical_envelope(flat, origin(1)).bounds == 0.3)
    osc = integrate(DelaySystem(lambda t, x, xd, w: np.stack([x[..., 1], -x[..., 0] - 0.2 * x[..., 1]], -1),
                                0.0, 2, 1, "ring"), HistoryWindow.constant([1.0, 0.0], 0.0), None, 20.0, 0.01)
    e = R.empirical_envelope(osc, origin(2))
    n = np.linalg.norm(osc.states, axis=1)
    peaks = np.array([n[i:].max() for i in range(0, n.size, 97)])
    np.testing.assert_array_equal(e.bounds[::97], peaks)
