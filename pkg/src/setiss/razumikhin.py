"""Razumikhin certificates: falsifiers, gain constructions, margin and monitor.

The falsifiers are semi-decisions.  They sample ``(x, x_d, w)`` triples,
keep those meeting the premise and report the first one (by sample index)
whose Lyapunov derivative exceeds the required decay.  A pass is evidence,
never proof, and the premise-hit count is always reported so a vacuous pass
is visible.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from . import gains as G
from .dde import CaseFailure, DelaySystem, NonFiniteState, Trajectory
from .gains import ComparisonFunction, KLEnvelope
from .sampling import SobolSampler
from .sets import HorizonTooShort, TargetSet, dist_point, window_norms

PREMISE_RTOL = 1e-9
SANDWICH_SLACK = 1e-9
DEFAULT_SLACK = 1e-7
FD_STEP = 1e-6


class RazumikhinError(ValueError):
    pass


class PremiseNeverSampled(RazumikhinError):
    pass


class WrongForm(RazumikhinError):
    pass


class NoMargin(RazumikhinError):
    pass


class BadL(RazumikhinError):
    pass


class EnvelopeFitFailed(RazumikhinError):
    pass


class BadRadius(UserWarning):
    pass


# ---------------------------------------------------------------------------
# certificate


def _euclid(w: np.ndarray) -> np.ndarray:
    return np.linalg.norm(w, axis=-1)


@dataclass(frozen=True)
class InputChannel:
    """One input channel of the premise: ``gain(norm(w[..., cols]))``."""

    name: str
    cols: tuple
    gain: ComparisonFunction
    norm: Callable = _euclid

    def magnitude(self, w: np.ndarray) -> np.ndarray:
        return self.norm(w[..., list(self.cols)])


@dataclass(frozen=True, eq=False)
class RazumikhinCertificate:
    """Lyapunov-Razumikhin data for one system.

    Exactly one of ``gain_v`` (acts on the history sup of V) and ``gain_x``
    (acts on the history norm of the state) should be set.  Input gains are
    given either as ``gain_w`` acting on ``|w|`` or as named ``channels``.
    """

    V: Callable
    alpha1: ComparisonFunction
    alpha2: ComparisonFunction
    alpha3: ComparisonFunction
    set: TargetSet
    gradV: Callable | None = None
    gain_v: ComparisonFunction | None = None
    gain_x: ComparisonFunction | None = None
    gain_w: ComparisonFunction | None = None
    channels: tuple = ()
    name: str = "certificate"
    extras: dict = field(default_factory=dict)

    @property
    def input_channels(self) -> tuple:
        if self.channels:
            return self.channels
        if self.gain_w is None:
            return ()
        return (InputChannel("w", None, self.gain_w),)

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.gradV is not None:
            return np.asarray(self.gradV(x), dtype=float)
        # central differences, step 1e-6 (1 + |x|)
        step = FD_STEP * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))
        out = np.empty_like(x)
        for i in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[i] = 1.0
            out[..., i] = (self.V(x + step * e) - self.V(x - step * e)) / (2 * step[..., 0])
        return out

    def vdot(self, rhs: Callable, x, xd, w) -> np.ndarray:
        return np.sum(self.grad(x) * rhs(0.0, x, xd, w), axis=-1)

    def channel_terms(self, w: np.ndarray) -> list:
        out = []
        for ch in self.input_channels:
            mag = _euclid(w) if ch.cols is None else ch.magnitude(w)
            out.append(np.asarray(G.evaluate(ch.gain, mag)))
        return out


# ---------------------------------------------------------------------------
# verdicts


@dataclass
class Verdict:
    passed: bool
    n: int
    premise_hits: int | None = None
    counterexample: dict | None = None
    worst_margin: float | None = None
    kind: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "pass": bool(self.passed),
            "n": int(self.n),
            "premise_hits": None if self.premise_hits is None else int(self.premise_hits),
            "worst_margin": None if self.worst_margin is None else float(self.worst_margin),
            "counterexample": self.counterexample,
        }


def _pack(**arrays) -> dict:
    out = {}
    for k, v in arrays.items():
        v = np.asarray(v)
        out[k] = v.tolist() if v.ndim else float(v)
    return out


def _draw(sampler, n: int) -> tuple:
    s = sampler.sample(n) if isinstance(sampler, SobolSampler) else sampler(n)
    x = np.asarray(s["x"], dtype=float)
    xd = np.asarray(s.get("x_d", x), dtype=float)
    w = np.asarray(s["w"], dtype=float) if "w" in s else np.zeros((x.shape[0], 1))
    return x, xd, w


def check_sandwich(cert: RazumikhinCertificate, sampler, n: int = 100_000) -> Verdict:
    """Look for ``x`` with ``V(x)`` outside ``[alpha1(|x|_A), alpha2(|x|_A)]``."""
    if n < 1:
        raise ValueError("n must be positive")
    x, _, _ = _draw(sampler, n)
    d = dist_point(cert.set, x)
    v = cert.V(x)
    lo = G.evaluate(cert.alpha1, d)
    hi = G.evaluate(cert.alpha2, d)
    tol = SANDWICH_SLACK * (1 + np.abs(v))
    bad = (v < lo - tol) | (v > hi + tol)
    margin = np.minimum(v - lo, hi - v)
    cex = None
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        cex = {"index": i, **_pack(x=x[i], dist=d[i], V=v[i], alpha1=lo[i], alpha2=hi[i])}
    return Verdict(not bad.any(), n, None, cex, float(np.min(margin)), "sandwich")


def _falsify(cert, rhs, sampler, n, slack, form):
    if n < 1:
        raise ValueError("n must be positive")
    x, xd, w = _draw(sampler, n)
    A = cert.set
    d = dist_point(A, x)
    dd = dist_point(A, xd)
    if form == 1:
        vx = cert.V(x)
        lhs = vx
        hist = G.evaluate(cert.gain_v, np.maximum(vx, cert.V(xd)))
    else:
        lhs = d
        hist = G.evaluate(cert.gain_x, np.maximum(d, dd))
    terms = [np.asarray(hist)] + cert.channel_terms(w)
    rhs_side = np.maximum.reduce(terms)
    premise = lhs >= rhs_side * (1 + PREMISE_RTOL)
    hits = int(premise.sum())
    if hits == 0:
        raise PremiseNeverSampled(f"no sample met the premise in n={n}")
    vdot = cert.vdot(rhs, x, xd, w)
    a3 = np.asarray(G.evaluate(cert.alpha3, d))
    bound = -a3 + slack * (1 + np.abs(a3))
    viol = premise & (vdot > bound)
    margin = np.where(premise, bound - vdot, np.inf)
    cex = None
    if viol.any():
        i = int(np.flatnonzero(viol)[0])
        cex = {"index": i, **_pack(x=x[i], x_d=xd[i], w=w[i], dist=d[i], premise_lhs=lhs[i],
                                   premise_rhs=rhs_side[i], vdot=vdot[i], required=-a3[i],
                                   slack=bound[i] + a3[i])}
    kind = "theorem1" if form == 1 else "theorem2"
    return Verdict(not viol.any(), n, hits, cex, float(np.min(margin)), kind)


def _rhs_of(sys) -> Callable:
    return sys.rhs if isinstance(sys, DelaySystem) else sys


def falsify_theorem1(cert: RazumikhinCertificate, sys, sampler, n: int = 100_000,
                     slack: float = DEFAULT_SLACK) -> Verdict:
    """Sample the implication ``V >= max{gain_v(|V_t|), gains(w)} => V' <= -alpha3``.

    ``|V_t|`` is instantiated as ``max{V(x), V(x_d)}``.
    """
    if cert.gain_v is None:
        raise WrongForm("certificate has no gain_v")
    return _falsify(cert, _rhs_of(sys), sampler, n, slack, 1)


def falsify_theorem2(cert: RazumikhinCertificate, sys, sampler, n: int = 100_000,
                     slack: float = DEFAULT_SLACK) -> Verdict:
    """Sample ``|x|_A >= max{gain_x(|x_t|_A), gains(w)} => V' <= -alpha3(|x|_A)``.

    ``|x_t|_A`` is instantiated as ``max{|x|_A, |x_d|_A}``.
    """
    if cert.gain_x is None:
        raise WrongForm("certificate has no gain_x")
    return _falsify(cert, _rhs_of(sys), sampler, n, slack, 2)


def recheck_counterexample(cert: RazumikhinCertificate, sys, cex: dict, form: int = 2,
                           slack: float = DEFAULT_SLACK) -> dict:
    """Re-evaluate a reported violator from scratch."""
    x = np.asarray(cex["x"], float)[None, :]
    xd = np.asarray(cex["x_d"], float)[None, :]
    w = np.asarray(cex["w"], float)[None, :]
    d = float(dist_point(cert.set, x)[0])
    dd = float(dist_point(cert.set, xd)[0])
    if form == 1:
        v = float(cert.V(x)[0])
        lhs = v
        hist = float(G.evaluate(cert.gain_v, max(v, float(cert.V(xd)[0]))))
    else:
        lhs = d
        hist = float(G.evaluate(cert.gain_x, max(d, dd)))
    rhs_side = max([hist] + [float(t[0]) for t in cert.channel_terms(w)])
    vdot = float(cert.vdot(_rhs_of(sys), x, xd, w)[0])
    a3 = float(G.evaluate(cert.alpha3, d))
    return {"premise": lhs >= rhs_side * (1 + PREMISE_RTOL), "vdot": vdot, "required": -a3,
            "excess": vdot + a3 - slack * (1 + a3)}


# ---------------------------------------------------------------------------
# envelope fitting for alpha1 / alpha2


def fit_power_envelopes(d: np.ndarray, v: np.ndarray, powers: Sequence[float],
                        shift: float = 0.01) -> tuple[ComparisonFunction, ComparisonFunction]:
    """Sums of powers ``sum c_p s^p`` below and above the cloud ``(d, v)``.

    Each side is a linear program (non-negative coefficients, tightest in the
    summed sense), then pulled away from the data by ``shift`` relative.
    """
    d = np.asarray(d, float)
    v = np.asarray(v, float)
    keep = d > 0
    d, v = d[keep], v[keep]
    P = np.column_stack([d ** p for p in powers])
    obj = P.sum(axis=0)
    # cutting planes: start from the extreme point of each distance bin and
    # add violated constraints until the whole cloud is respected
    bins = np.minimum((d / d.max() * 512).astype(int), 511)

    def solve(sign):
        order = np.lexsort((sign * v, bins))
        first = order[np.r_[True, bins[order][1:] != bins[order][:-1]]]
        active = np.zeros(d.size, dtype=bool)
        active[first] = True
        for _ in range(50):
            res = linprog(-sign * obj, A_ub=sign * P[active], b_ub=sign * v[active],
                          bounds=[(0, None)] * len(powers), method="highs")
            if res.status != 0:
                raise EnvelopeFitFailed("envelope LP did not solve")
            viol = sign * (P @ res.x - v) > 1e-12 * (1 + np.abs(v))
            if not viol.any():
                return res.x
            active |= viol
        raise EnvelopeFitFailed("envelope LP did not settle")

    lo_c = solve(1.0) * (1 - shift)
    hi_c = solve(-1.0) * (1 + shift)
    if not np.any(lo_c > 0) or not np.any(hi_c > 0):
        raise EnvelopeFitFailed("an envelope collapsed to zero")

    def build(cs):
        terms = [G.power(p, float(c)) for p, c in zip(powers, cs) if c > 0]
        return terms[0] if len(terms) == 1 else G.sum_of(*terms)

    return build(lo_c), build(hi_c)


# ---------------------------------------------------------------------------
# gain constructions


def lemma_gain_u2(alpha3: ComparisonFunction, L: float) -> ComparisonFunction:
    """``s -> max{s, alpha3^{-1}(2 (1 + L) s)}``; needs ``L >= 1``."""
    if L < 1:
        raise BadL(f"L must be at least 1, got {L}")
    return G.max_of(G.identity(), G.compose(G.inverse(alpha3), G.affine(2 * (1 + L))))


@dataclass(frozen=True)
class DelayedPerturbationGains:
    gamma_v: ComparisonFunction
    gamma_u: ComparisonFunction
    alpha4: ComparisonFunction
    alpha5: ComparisonFunction
    small_gain: G.SmallGainResult

    @property
    def applicable(self) -> bool:
        return self.small_gain.holds


def robustness2_gains(alpha2, alpha3, gamma, k, check_interval=(0.0, 1.0)) -> DelayedPerturbationGains:
    """Gains for an additive delayed perturbation bounded by ``k(|V_t|)``.

    ``alpha4 = alpha3(0.5 alpha2^{-1})``, ``gamma_v = alpha4^{-1}(2 gamma(4 k))``,
    ``gamma_u = alpha4^{-1}(2 gamma(4 s))`` and ``alpha5 = alpha4 o alpha2``.
    """
    alpha4 = G.compose_all(alpha3, G.affine(0.5), G.inverse(alpha2))
    inv4 = G.inverse(alpha4)
    gamma_v = G.compose_all(inv4, G.affine(2.0), gamma, G.affine(4.0), k)
    gamma_u = G.compose_all(inv4, G.affine(2.0), gamma, G.affine(4.0))
    alpha5 = G.compose(alpha4, alpha2)
    return DelayedPerturbationGains(gamma_v, gamma_u, alpha4, alpha5,
                                    G.small_gain_holds(gamma_v, check_interval))


def _smooth_step(tau: np.ndarray) -> np.ndarray:
    tau = np.clip(tau, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(tau > 0, np.exp(-1.0 / np.where(tau > 0, tau, 1.0)), 0.0)
        b = np.where(tau < 1, np.exp(-1.0 / np.where(tau < 1, 1.0 - tau, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True, eq=False)
class BScaling:
    """Smooth scaling ``b`` with ``b = 1`` on ``[0, r0]`` and ``b (0.5 + psi) <= 1``."""

    psi: ComparisonFunction
    r0: float
    s0: float
    c: float
    status: str

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        g = self.c / (0.5 + G.evaluate(self.psi, s))
        if self.s0 > self.r0:
            sig = _smooth_step((s - self.r0) / (self.s0 - self.r0))
        else:
            sig = (s > self.r0).astype(float)
        out = np.where(s <= self.r0, 1.0, (1.0 - sig) + sig * g)
        return float(out) if out.ndim == 0 else out


def construct_b_scaling(psi: ComparisonFunction, flat_radius: float) -> BScaling:
    """Build ``b`` for the input rescaling ``u1 -> b(|x|) u1``.

    ``r0 = min(flat_radius, s0 / 2)`` where ``psi(s0) = 0.5``.  Past ``r0``
    a C-infinity step blends ``1`` into ``c / (0.5 + psi)`` with
    ``c = 0.5 + psi(r0) < 1``.  If ``psi(flat_radius) > 0.5`` the flat zone is
    shrunk and a :class:`BadRadius` warning is issued.
    """
    if flat_radius <= 0:
        raise RazumikhinError("flat_radius must be positive")
    if psi.class_tag != G.K_INF:
        raise RazumikhinError("psi must be class K_inf")
    s0 = float(G.invert(psi, 0.5))
    status = "ok"
    if float(G.evaluate(psi, flat_radius)) > 0.5:
        status = "radius_shrunk"
        warnings.warn(BadRadius(f"psi({flat_radius}) > 0.5; flat zone shrunk to {s0 / 2:.6g}"))
    r0 = min(float(flat_radius), s0 / 2)
    c = 0.5 + float(G.evaluate(psi, r0))
    return BScaling(psi, r0, s0, c, status)


# ---------------------------------------------------------------------------
# delay margin


@dataclass(frozen=True)
class MarginReport:
    delta_star: float
    mu: float
    Delta: float
    worst_s: float | None
    iterations: int
    status: str
    tol: float

    def to_dict(self) -> dict:
        ds = self.delta_star
        return {"delta_star": ds if math.isfinite(ds) else "inf", "mu": self.mu, "Delta": self.Delta,
                "worst_s": self.worst_s, "iterations": self.iterations, "status": self.status,
                "tol": self.tol}


def margin_loop_gain(gamma_theta, gamma1, alpha1, alpha2, delta: float) -> ComparisonFunction:
    """``alpha1^{-1} o alpha2 o gamma_theta(delta * gamma1(s))``."""
    return G.compose_all(G.inverse(alpha1), alpha2, gamma_theta, G.affine(delta), gamma1)


def delay_margin(gamma_theta, gamma1, alpha1, alpha2, mu: float, Delta: float, tol: float = 1e-7,
                 grid_size: int = 4096, delta_cap: float = 1e6, raise_errors: bool = False) -> MarginReport:
    """Largest ``delta`` with the loop gain below the identity on ``(mu, Delta)``.

    Brackets by doubling from 1 (up to ``delta_cap``) and then bisects on a
    geometric midpoint until ``hi - lo <= tol * max(1, ...)``-style relative
    width ``tol * hi``.  Status is ``converged``, ``unbounded`` (holds at the
    cap; ``delta_star = inf``), ``no_margin`` (fails even at 1e-15) or
    ``interval_empty``.  With ``raise_errors`` the last two raise.
    """
    try:
        G.small_gain_holds(G.identity(), (mu, Delta), 16)
    except G.EmptyInterval:
        if raise_errors:
            raise
        return MarginReport(0.0, mu, Delta, None, 0, "interval_empty", tol)

    def test(delta):
        return G.small_gain_holds(margin_loop_gain(gamma_theta, gamma1, alpha1, alpha2, delta),
                                  (mu, Delta), grid_size)

    it = 0
    tiny = 1e-15
    r = test(tiny)
    it += 1
    if not r.holds:
        if raise_errors:
            raise NoMargin("small-gain condition fails even for a vanishing delay")
        return MarginReport(0.0, mu, Delta, r.worst_point, it, "no_margin", tol)
    lo, hi = tiny, 1.0
    r_hi = test(hi)
    it += 1
    if r_hi.holds:
        while r_hi.holds and hi < delta_cap:
            lo = hi
            hi = min(hi * 2.0, delta_cap)
            r_hi = test(hi)
            it += 1
        if r_hi.holds:
            if raise_errors:
                raise G.GainError("unbounded margin")
            return MarginReport(math.inf, mu, Delta, r_hi.worst_point, it, "unbounded", tol)
    worst = r_hi.worst_point
    while hi - lo > tol * hi:
        mid = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        rm = test(mid)
        it += 1
        if rm.holds:
            lo = mid
        else:
            hi, worst = mid, rm.worst_point
    return MarginReport(lo, mu, Delta, worst, it, "converged", tol)


# ---------------------------------------------------------------------------
# trajectory monitor


def empirical_envelope(traj: Trajectory, A: TargetSet, max_samples: int = 3000,
                       times: np.ndarray | None = None, values: np.ndarray | None = None) -> KLEnvelope:
    """Non-increasing upper envelope (suffix max) of ``t -> |x_t|_A``."""
    if values is None:
        times = _monitor_times(traj, traj.t0, max_samples)
        values, _ = window_norms(A, traj, times)
    env = np.maximum.accumulate(np.asarray(values)[::-1])[::-1]
    return KLEnvelope(np.asarray(times) - traj.t0, env)


def _monitor_times(traj: Trajectory, t_from: float, max_samples: int) -> np.ndarray:
    t = traj.node_times(t_from)
    if t.size > max_samples:
        idx = np.unique(np.linspace(0, t.size - 1, max_samples).round().astype(int))
        t = t[idx]
    return t


@dataclass
class IssVerdict:
    ultimate_bound_observed: float
    predicted_bound: float
    threshold: float
    transient_time: float | None
    envelope: KLEnvelope
    passed: bool
    status: str = "exact"

    def to_dict(self) -> dict:
        return {"ultimate_bound_observed": self.ultimate_bound_observed,
                "predicted_bound": self.predicted_bound, "threshold": self.threshold,
                "transient_time": self.transient_time, "pass": bool(self.passed),
                "norm_status": self.status, "envelope_anchor": self.envelope.anchor}


def iss_monitor(traj, A: TargetSet, gain: ComparisonFunction, w_sup: float, mu: float = 0.0,
                transient_fraction: float = 0.5, slack: float = 0.05, floor: float = 1e-6,
                max_samples: int = 3000) -> IssVerdict:
    """Compare the tail of ``|x_t|_A`` with ``max{gain(w_sup), mu}``.

    The tail is ``[t0 + f (T - t0), T]`` for ``f = transient_fraction``; it
    must span at least ten delay windows.  The run passes iff every sampled
    tail value is within ``max{bound (1 + slack), floor}``.
    """
    if isinstance(traj, CaseFailure):
        raise traj.error
    if traj.status != "ok":
        raise NonFiniteState("trajectory diverged", traj)
    if not 0 <= transient_fraction < 1:
        raise ValueError("transient_fraction must be in [0, 1)")
    t_tail = traj.t0 + transient_fraction * (traj.T - traj.t0)
    if traj.delay > 0 and traj.T - t_tail < 10 * traj.delay:
        raise HorizonTooShort("tail shorter than ten delay windows")
    times = _monitor_times(traj, traj.t0, max_samples)
    tail_extra = traj.node_times(t_tail)
    if tail_extra.size > max_samples:
        tail_extra = _monitor_times(traj, t_tail, max_samples)
    times = np.union1d(times, tail_extra)
    values, status = window_norms(A, traj, times)
    envelope = empirical_envelope(traj, A, times=times, values=values)
    predicted = max(float(G.evaluate(gain, w_sup)), float(mu))
    threshold = max(predicted * (1 + slack), floor)
    tail = times >= t_tail - 1e-12
    ultimate = float(np.max(values[tail]))
    below = np.flatnonzero(values <= threshold)
    transient = float(times[below[0]]) if below.size else None
    return IssVerdict(ultimate, predicted, threshold, transient, envelope, ultimate <= threshold, status)
