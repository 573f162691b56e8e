import math

import numpy as np
import pytest
from scipy.optimize import brentq
from hypothesis import given, settings, strategies as st

from setiss import dde as D
from setiss import systems as Y
from setiss.sets import HistoryWindow, OutOfSpan, dist_point, stuart_landau_set


def linear(delay=0.0):
    return D.DelaySystem(lambda t, x, xd, w: -x, delay, 1, 1, "decay")


def test_linear_ode_to_e_inverse():
    traj = D.integrate(linear(), HistoryWindow.constant([1.0], 0.0), None, 1.0, 1e-3)
    assert abs(traj.states[-1, 0] - math.exp(-1)) <= 1e-8


def test_zero_delay_is_plain_rk4_bitwise():
    p = Y.OscillatorParams()
    sys = Y.oscillator_system(p, delayed=True, delay=0.0)
    traj = D.integrate(sys, HistoryWindow.constant([1.0, 1.0], 0.0), None, 2.0, 1e-2)
    ref = D.rk4_reference(lambda t, x: sys.rhs(t, x, x, np.zeros(1)), [1.0, 1.0], 2.0, 1e-2)
    assert np.array_equal(traj.states, ref)


def test_step_adjusted_to_divide_delay():
    assert D.adjust_step(0.03, 0.1) == pytest.approx(0.025)
    assert D.adjust_step(0.2, 0.1) == 0.2
    with pytest.raises(D.BadStep):
        D.adjust_step(0.0, 1.0)
    traj = D.integrate(linear(0.1), HistoryWindow.constant([1.0], 0.1), None, 1.0, 0.03)
    assert traj.h == pytest.approx(0.025)
    assert traj.h_requested == 0.03


def test_divergence_flagged_with_partial_record():
    sys = D.DelaySystem(lambda t, x, xd, w: x * x, 0.0, 1, 1, "blowup")
    with pytest.raises(D.NonFiniteState) as info:
        D.integrate(sys, HistoryWindow.constant([1.0], 0.0), None, 5.0, 1e-3)
    partial = info.value.trajectory
    assert partial is not None and partial.status == "diverged"
    assert partial.T < 1.01


def test_history_at_start_returns_initial_history():
    hist = HistoryWindow.constant([1.0, 1.0], 0.5)
    traj = D.integrate(Y.oscillator_system(Y.OscillatorParams(), delay=0.5), hist, None, 2.0, 1e-2)
    assert traj.history_at(traj.t0) is hist
    with pytest.raises(OutOfSpan):
        traj.history_at(3.0)


def test_constant_trajectory_gives_constant_window():
    traj = D.integrate(D.DelaySystem(lambda t, x, xd, w: 0 * x, 0.3, 2, 1, "still"),
                       HistoryWindow.constant([0.5, -0.5], 0.3), None, 1.0, 0.01)
    w = traj.history_at(0.8)
    np.testing.assert_array_equal(w.samples(), np.tile([0.5, -0.5], (w.samples().shape[0], 1)))


def test_cubic_exact_in_dense_output():
    # x' = 3 t^2 is integrated exactly by RK4, and Hermite is exact on cubics
    sys = D.DelaySystem(lambda t, x, xd, w: np.full_like(x, 3 * t * t), 0.0, 1, 1, "cubic")
    traj = D.integrate(sys, HistoryWindow.constant([0.0], 0.0), None, 1.0, 0.1)
    for t in (0.05, 0.37, 0.912):
        assert traj(t)[0] == pytest.approx(t ** 3, abs=1e-12)


def test_sl_circle_invariant():
    p = Y.StuartLandauParams()
    sys = Y.stuart_landau_system(p, delayed=True, delay=0.2)
    traj = D.integrate(sys, HistoryWindow.constant([0.6, 0.8], 0.2), None, 50.0, 1e-3)
    assert np.max(dist_point(stuart_landau_set(p.alpha), traj.states)) <= 1e-6


def test_short_delay_on_exact_exponential():
    # x' = -x(t - d) has the solution exp(lam t) with lam = -exp(-lam d);
    # seeding with that history avoids breakpoints
    d = 6e-4
    lam = brentq(lambda v: v + math.exp(-v * d), -2.0, 0.0)
    hist = HistoryWindow.from_function(lambda t: [math.exp(lam * t)],
                                       lambda t: [lam * math.exp(lam * t)], d, n=16)
    traj = D.integrate(linear_delayed(d), hist, None, 1.0, 1e-3)
    assert "iterated" in traj.notes[-1]
    assert abs(traj.states[-1, 0] - math.exp(lam)) <= 1e-12


def linear_delayed(d):
    return D.DelaySystem(lambda t, x, xd, w: -xd, d, 1, 1, "delayed decay")


def test_delayed_linear_method_of_steps_oracle():
    # unit history: x(t) = sum_k (-1)^k (t - (k-1) d)^k / k! on the k-th interval
    d = 0.1
    t = 1.0
    exact = sum((-1) ** k * (t - (k - 1) * d) ** k / math.factorial(k)
                for k in range(int(t / d) + 2) if t - (k - 1) * d > 0)
    traj = D.integrate(linear_delayed(d), HistoryWindow.constant([1.0], d), None, t, 1e-3)
    assert abs(traj.states[-1, 0] - exact) <= 1e-12


def test_disturbance_signals():
    s = D.DisturbanceSignal.step(1.0, [0.3, 0.4], dim=2)
    assert s.sup_norm == pytest.approx(0.5)
    np.testing.assert_array_equal(s(0.5), [0.0, 0.0])
    np.testing.assert_allclose(s(1.5), [0.3, 0.4])
    tab = D.DisturbanceSignal.table([0.0, 1.0], [[0.0], [2.0]])
    assert tab(0.5)[0] == pytest.approx(1.0)
    back = D.DisturbanceSignal.from_dict(s.to_dict(), dim=2)
    assert back.to_dict() == s.to_dict()


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(-1.0, 1.0), st.floats(0.0, 6.0))
def test_sinusoid_sup_norm_bounds(amp, phase, t):
    s = D.DisturbanceSignal.sinusoid(amp, 1.3, phase)
    assert np.linalg.norm(s(t)) <= s.sup_norm + 1e-15


def _cases(amps, delay=0.1):
    hist = HistoryWindow.constant([1.0, 1.0], delay)
    return [(hist, D.DisturbanceSignal.step(1.0, a)) for a in amps]


def test_batch_order_and_determinism():
    sys = Y.oscillator_system(Y.OscillatorParams(), delay=0.1)
    cases = _cases([0.0, 0.05, 0.05, 0.1])
    out = D.batch_simulate(sys, cases, 3.0, 1e-2)
    single = D.integrate(sys, *cases[1], 3.0, 1e-2)
    assert np.array_equal(out[1].states, single.states)
    assert np.array_equal(out[1].states, out[2].states)
    for (hist, w), traj in zip(cases, out):
        np.testing.assert_array_equal(traj.disturbance[-1], w(traj.T))


def test_lockstep_matches_sequential():
    sys = Y.oscillator_system(Y.OscillatorParams(), delay=0.1)
    cases = _cases(np.linspace(0, 0.1, 100))
    lock = D.integrate_lockstep(sys, cases, 2.0, 1e-2)
    seq = D.batch_simulate(sys, cases, 2.0, 1e-2)
    assert len(lock) == 100
    for a, b in zip(lock, seq):
        np.testing.assert_allclose(a.states, b.states, rtol=0, atol=1e-13)


def test_batch_failure_isolated():
    sys = D.DelaySystem(lambda t, x, xd, w: x * x * w, 0.0, 1, 1, "maybe")
    hist = HistoryWindow.constant([1.0], 0.0)
    out = D.batch_simulate(sys, [(hist, D.DisturbanceSignal.constant(5.0)),
                                 (hist, D.DisturbanceSignal.zero())], 1.0, 1e-3)
    assert isinstance(out[0], D.CaseFailure)
    assert isinstance(out[1], D.Trajectory)
    with pytest.raises(ValueError):
        D.batch_simulate(sys, [], 1.0, 1e-3)
