"""Ready-made case studies: a damped nonlinear oscillator and a forced
Stuart-Landau oscillator, each with plant, perturbed plant and certificate.

In both, a feedback delay ``tau`` is treated as an additive input ``theta``
equal to the feedback evaluated at ``t - tau`` minus its value at ``t``.  The
certificates bound the derivative of V along the *theta-perturbed* plant, and
the delayed plant is what gets simulated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gains as G
from .dde import DelaySystem
from .gains import ComparisonFunction
from .razumikhin import (EnvelopeFitFailed, InputChannel, RazumikhinCertificate, check_sandwich,
                         fit_power_envelopes)
from .sampling import SobolSampler, box, radial
from .sets import origin, stuart_landau_set

FIT_GRID = 401
CERT_BOX = 3.0


def lipschitz_estimate(fn, box_bounds, grid: int = 256, safety: float = 1.1) -> float:
    """Largest finite-difference slope of ``fn`` over a grid, times ``safety``.

    Scalar maps use central differences; vector maps use the spectral norm of
    the central-difference Jacobian.  ``box_bounds`` is ``[(lo, hi), ...]``.
    """
    if grid < 64:
        raise ValueError("grid must have at least 64 points per dimension")
    bounds = np.asarray(box_bounds, dtype=float).reshape(-1, 2)
    dim = bounds.shape[0]
    axes = [np.linspace(lo, hi, grid) for lo, hi in bounds]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    step = 1e-6 * (1.0 + np.abs(pts))
    if dim == 1:
        r = pts[:, 0]
        hstep = step[:, 0]
        slope = np.abs(np.asarray(fn(r + hstep)) - np.asarray(fn(r - hstep))) / (2 * hstep)
        return float(np.max(slope)) * safety
    cols = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        hi = step[:, i:i + 1]
        cols.append((np.asarray(fn(pts + hi * e)) - np.asarray(fn(pts - hi * e))) / (2 * hi))
    J = np.stack(cols, axis=-1)  # (N, out, in)
    return float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2)))) * safety


# ---------------------------------------------------------------------------
# damped nonlinear oscillator


@dataclass(frozen=True, eq=False)
class OscillatorParams:
    """``x1' = x2``, ``x2' = -k(x1) - mu x2 + w`` with ``k`` odd.

    ``stiffness`` gives ``k`` on ``[0, inf)``; it is extended oddly.
    ``eta`` is a K-infinity lower bound for ``k``.  ``L`` defaults to the
    Lipschitz estimate of ``k`` on ``[-lipschitz_box, lipschitz_box]``.
    """

    mu: float = 1.0
    stiffness: ComparisonFunction = field(default_factory=lambda: G.power(3))
    eta: ComparisonFunction = field(default_factory=lambda: G.power(3))
    L: float | None = None
    lipschitz_box: float = 2.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("damping mu must be positive")
        r = np.geomspace(1e-4, 1e2, 512)
        if np.any(G.evaluate(self.stiffness, r) <= 0):
            raise ValueError("stiffness must satisfy r k(r) > 0")
        if np.any(G.evaluate(self.eta, r) > G.evaluate(self.stiffness, r) * (1 + 1e-12)):
            raise ValueError("eta must lie below the stiffness")
        object.__setattr__(self, "_k_fast", G.compiled(self.stiffness))
        if self.L is None:
            b = self.lipschitz_box
            object.__setattr__(self, "L", lipschitz_estimate(self.k, [(-b, b)]))

    def k(self, r):
        r = np.asarray(r, dtype=float)
        return np.sign(r) * self._k_fast(np.abs(r))

    def k_integral(self, r):
        """``int_0^r k``; closed form for power laws, Gauss-Legendre otherwise."""
        r = np.abs(np.asarray(r, dtype=float))
        st = self.stiffness
        if st.op == "power":
            p, c = st.params["p"], st.params["coef"]
            return c * r ** (p + 1) / (p + 1)
        nodes, weights = np.polynomial.legendre.leggauss(32)
        s = 0.5 * (nodes + 1.0)
        vals = G.evaluate(st, r[..., None] * s)
        return 0.5 * r * np.sum(weights * vals, axis=-1)


def oscillator_system(p: OscillatorParams, delayed: bool = True, delay: float = 0.0) -> DelaySystem:
    """Velocity feedback read at ``t - delay`` when ``delayed``."""
    mu, k = p.mu, p.k

    def rhs(t, x, xd, w):
        v = xd[..., 1] if delayed else x[..., 1]
        out = np.empty(x.shape if x.shape == xd.shape else np.broadcast_shapes(x.shape, xd.shape))
        out[..., 0] = v
        out[..., 1] = -k(x[..., 0]) - mu * v + w[..., 0]
        return out

    name = "oscillator_delayed" if delayed else "oscillator"
    return DelaySystem(rhs, float(delay) if delayed else 0.0, 2, 1, name)


def oscillator_theta_system(p: OscillatorParams) -> DelaySystem:
    """Plant with the delay mismatch as input: ``w = (a, w)``, ``theta = a (1, -mu)``."""
    mu, k = p.mu, p.k

    def rhs(t, x, xd, w):
        a = w[..., 0]
        out = np.empty(np.broadcast_shapes(x.shape, xd.shape))
        out[..., 0] = x[..., 1] + a
        out[..., 1] = -k(x[..., 0]) - mu * x[..., 1] - mu * a + w[..., 1]
        return out

    return DelaySystem(rhs, 0.0, 2, 2, "oscillator_theta")


def oscillator_V(p: OscillatorParams):
    mu = p.mu

    def V(x):
        x1, x2 = x[..., 0], x[..., 1]
        return 0.5 * mu * mu * x1 * x1 + mu * x1 * x2 + x2 * x2 + 2 * p.k_integral(x1)

    def grad(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([mu * mu * x1 + mu * x2 + 2 * p.k(x1), mu * x1 + 2 * x2], axis=-1)

    return V, grad


def oscillator_gain(p: OscillatorParams) -> ComparisonFunction:
    """No-delay ISS gain from ``w`` to ``|x|``."""
    return G.oscillator_gamma(p.mu, p.eta)


def oscillator_gamma_theta(p: OscillatorParams) -> ComparisonFunction:
    inv = G.inverse(p.eta)
    return G.max_of(G.compose(G.power(4, 10.0), inv), G.compose(G.power(2, 10.0), inv),
                    G.power(1, 24 * math.sqrt(10)))


def oscillator_gamma1(p: OscillatorParams) -> ComparisonFunction:
    """``r -> 10 L (k(r) + r)``, the largest ``10 L |k(l1) + l2|`` over ``|l1|, |l2| <= r``."""
    c = 10 * p.L
    return G.sum_of(G.scale(p.stiffness, c), G.power(1, c))


def oscillator_gamma2(p: OscillatorParams) -> ComparisonFunction:
    return G.power(1, 10 * p.L)


def oscillator_alpha3(p: OscillatorParams, box_radius: float = CERT_BOX, grid: int = FIT_GRID,
                      safety: float = 0.99) -> ComparisonFunction:
    """``c min{s^2, s^4}`` below ``(|x1| eta(|x1|) + x2^2) / 4`` on the box."""
    ax = np.linspace(-box_radius, box_radius, grid)
    X1, X2 = np.meshgrid(ax, ax, indexing="ij")
    r = np.hypot(X1, X2).ravel()
    decay = 0.25 * (np.abs(X1) * G.evaluate(p.eta, np.abs(X1)) + X2 * X2).ravel()
    keep = r > 0
    ratio = decay[keep] / np.minimum(r[keep] ** 2, r[keep] ** 4)
    c = float(np.min(ratio)) * safety
    return G.min_of(G.power(2, c), G.power(4, c))


def oscillator_sampler(p: OscillatorParams, seed: int = 0, box_radius: float = CERT_BOX,
                       theta_max: float = 1.0, w_max: float = 1.0) -> SobolSampler:
    """State box, then ``a`` with ``|theta| <= theta_max`` and ``|w| <= w_max``."""
    b = box_radius
    a_max = theta_max / math.sqrt(1 + p.mu ** 2)
    return SobolSampler((box("x", [-b, -b], [b, b]), radial("w", 1, a_max), radial("w", 1, w_max)), seed)


def oscillator_certificate(p: OscillatorParams | None = None, box_radius: float = CERT_BOX,
                           grid: int = FIT_GRID, validate: bool = True) -> RazumikhinCertificate:
    p = OscillatorParams() if p is None else p
    V, grad = oscillator_V(p)
    ax = np.linspace(-box_radius, box_radius, grid)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    a1, a2 = fit_power_envelopes(np.linalg.norm(pts, axis=1), V(pts), (2, 4))
    snorm = math.sqrt(1 + p.mu ** 2)
    gamma = oscillator_gain(p)
    gamma_theta = oscillator_gamma_theta(p)
    channels = (
        InputChannel("theta", (0,), gamma_theta, lambda a: snorm * np.abs(a[..., 0])),
        InputChannel("w", (1,), gamma),
    )
    cert = RazumikhinCertificate(
        V=V, gradV=grad, alpha1=a1, alpha2=a2, alpha3=oscillator_alpha3(p, box_radius, grid),
        set=origin(2), gain_x=G.zero(), gain_w=gamma, channels=channels, name="oscillator",
        extras={"params": p, "gamma": gamma, "gamma_theta": gamma_theta, "gamma1": oscillator_gamma1(p),
                "gamma2": oscillator_gamma2(p), "L": p.L, "theta_system": oscillator_theta_system(p),
                "sandwich_box": box_radius},
    )
    if validate:
        samp = SobolSampler((box("x", [-box_radius] * 2, [box_radius] * 2),), 0)
        v = check_sandwich(cert, samp, 2 ** 14)
        if not v.passed:
            raise EnvelopeFitFailed(f"sandwich fails at {v.counterexample}")
    return cert


# ---------------------------------------------------------------------------
# Stuart-Landau oscillator


@dataclass(frozen=True)
class StuartLandauParams:
    """``z' = -nu |z|^2 z + mu z + u`` with complex ``nu``, ``mu``."""

    nu_R: float = 1.0
    nu_I: float = 0.0
    mu_R: float = 1.0
    mu_I: float = 0.0
    L: float | None = None
    lipschitz_box: float = 1.5

    def __post_init__(self):
        if not (self.nu_R > 0 and self.mu_R > 0):
            raise ValueError("nu_R and mu_R must be positive")
        if self.L is None:
            b = self.lipschitz_box
            object.__setattr__(self, "L", lipschitz_estimate(self.feedback, [(-b, b), (-b, b)], grid=128))

    @property
    def alpha(self) -> float:
        return self.mu_R / self.nu_R

    def feedback(self, z):
        """``k(z) = -nu |z|^2 z + mu z`` in real coordinates."""
        x, y = z[..., 0], z[..., 1]
        r2 = x * x + y * y
        ax = -r2 * (self.nu_R * x - self.nu_I * y) + self.mu_R * x - self.mu_I * y
        ay = -r2 * (self.nu_R * y + self.nu_I * x) + self.mu_R * y + self.mu_I * x
        return np.stack([ax, ay], axis=-1)


def stuart_landau_system(p: StuartLandauParams, delayed: bool = True, delay: float = 0.0) -> DelaySystem:
    """Feedback term evaluated at ``t - delay`` when ``delayed``; ``u`` is 2-d."""
    fb = p.feedback

    def rhs(t, x, xd, w):
        return fb(xd if delayed else x) + w

    name = "stuart_landau_delayed" if delayed else "stuart_landau"
    return DelaySystem(rhs, float(delay) if delayed else 0.0, 2, 2, name)


def stuart_landau_theta_system(p: StuartLandauParams) -> DelaySystem:
    """Plant plus the mismatch input: ``w = (u, theta)`` in R^4."""
    fb = p.feedback

    def rhs(t, x, xd, w):
        return fb(x) + w[..., 0:2] + w[..., 2:4]

    return DelaySystem(rhs, 0.0, 2, 4, "stuart_landau_theta")


def stuart_landau_V(p: StuartLandauParams):
    a, nr = p.alpha, p.nu_R

    def V(z):
        r2 = np.sum(z * z, axis=-1)
        return (r2 - a) ** 2 / (4 * nr)

    def grad(z):
        r2 = np.sum(z * z, axis=-1, keepdims=True)
        return (r2 - a) * z / nr

    return V, grad


def stuart_landau_gain(p: StuartLandauParams) -> ComparisonFunction:
    """No-delay gain ``c3^{-1}((4 / nu_R^2) s^2)``."""
    return G.compose(G.inverse(G.c3(p.alpha)), G.power(2, 4 / p.nu_R ** 2))


def stuart_landau_gamma_theta(p: StuartLandauParams) -> ComparisonFunction:
    return G.compose(G.inverse(G.c3(p.alpha)), G.power(2, 2 / p.nu_R ** 2))


def stuart_landau_gamma1_value(r, nu_R=1.0, nu_I=0.0, mu_R=1.0, mu_I=0.0, L=1.0):
    """``10 L max |k(l)|`` over ``{l : |l|_A <= r}``.

    With ``q = |l|^2``, ``|k(l)|^2 = |nu|^2 q^3 - 2 Re(mu conj(nu)) q^2 + |mu|^2 q``;
    the feasible ``q`` form ``[0, min(r^2, 0.49 a)]`` and
    ``[max(a - r^2, 0.49 a), a + r^2]`` (``a = mu_R / nu_R``).  The cubic is
    maximised over endpoints and interior critical points.
    """
    r = np.asarray(r, dtype=float)
    a = mu_R / nu_R
    n2 = nu_R ** 2 + nu_I ** 2
    m2 = mu_R ** 2 + mu_I ** 2
    cross = mu_R * nu_R + mu_I * nu_I

    def h(q):
        return np.maximum(n2 * q ** 3 - 2 * cross * q ** 2 + m2 * q, 0.0)

    disc = 16 * cross ** 2 - 12 * n2 * m2
    crit = []
    if disc >= 0:
        crit = [(4 * cross - math.sqrt(disc)) / (6 * n2), (4 * cross + math.sqrt(disc)) / (6 * n2)]
    r2 = r * r
    seg = [(np.zeros_like(r), np.minimum(r2, 0.49 * a)),
           (np.maximum(a - r2, 0.49 * a), a + r2)]
    best = np.zeros_like(r)
    for lo, hi in seg:
        ok = hi >= lo
        cand = [h(lo), h(hi)]
        for q in crit:
            inside = ok & (q >= lo) & (q <= hi)
            cand.append(np.where(inside, h(np.full_like(r, q)), 0.0))
        best = np.maximum(best, np.where(ok, np.maximum.reduce(cand), 0.0))
    out = 10 * L * np.sqrt(best)
    return float(out) if out.ndim == 0 else out


def stuart_landau_gamma1(p: StuartLandauParams) -> ComparisonFunction:
    params = {"nu_R": p.nu_R, "nu_I": p.nu_I, "mu_R": p.mu_R, "mu_I": p.mu_I, "L": p.L}
    return _sl_gamma1_node(**params)


def _sl_gamma1_node(nu_R=1.0, nu_I=0.0, mu_R=1.0, mu_I=0.0, L=1.0) -> ComparisonFunction:
    params = {"nu_R": nu_R, "nu_I": nu_I, "mu_R": mu_R, "mu_I": mu_I, "L": L}
    fn = lambda s: stuart_landau_gamma1_value(s, **params)  # noqa: E731
    return G.user(fn, G.K_INF, name="stuart_landau_gamma1", params=params)


G.register_builtin("stuart_landau_gamma1", _sl_gamma1_node)


def stuart_landau_gamma2(p: StuartLandauParams) -> ComparisonFunction:
    return G.power(1, 10 * p.L)


def stuart_landau_sampler(p: StuartLandauParams, seed: int = 0, box_radius: float = CERT_BOX,
                          u_max: float = 1.0, theta_max: float = 1.0) -> SobolSampler:
    b = box_radius
    return SobolSampler((box("x", [-b, -b], [b, b]), radial("w", 2, u_max), radial("w", 2, theta_max)), seed)


def stuart_landau_certificate(p: StuartLandauParams | None = None, box_radius: float = CERT_BOX,
                              grid: int = FIT_GRID, validate: bool = True) -> RazumikhinCertificate:
    """Certificate in history-norm form with decay ``c3 / 4``.

    V vanishes on the circle but not at the origin, so the sandwich can only
    hold away from the origin; the bounds are fitted and checked on the
    annulus ``0.7 sqrt(a) < |z| <= box_radius``, where ``V = |z|_A^4 / (4 nu_R)``.
    """
    p = StuartLandauParams() if p is None else p
    A = stuart_landau_set(p.alpha)
    V, grad = stuart_landau_V(p)
    inner = 0.7 * math.sqrt(p.alpha)
    rr = np.linspace(inner, box_radius, grid)[1:]
    z = np.column_stack([rr, np.zeros_like(rr)])
    a1, a2 = fit_power_envelopes(A.distance(z), V(z), (4,))
    gamma = stuart_landau_gain(p)
    gamma_theta = stuart_landau_gamma_theta(p)
    channels = (InputChannel("u", (0, 1), gamma), InputChannel("theta", (2, 3), gamma_theta))
    cert = RazumikhinCertificate(
        V=V, gradV=grad, alpha1=a1, alpha2=a2, alpha3=G.scale(G.c3(p.alpha), 0.25), set=A,
        gain_x=G.zero(), gain_w=gamma, channels=channels, name="stuart_landau",
        extras={"params": p, "gamma": gamma, "gamma_theta": gamma_theta, "gamma1": stuart_landau_gamma1(p),
                "gamma2": stuart_landau_gamma2(p), "L": p.L, "theta_system": stuart_landau_theta_system(p),
                "sandwich_annulus": (inner, box_radius)},
    )
    if validate:
        v = check_sandwich(cert, annulus_sampler(inner, box_radius), 2 ** 14)
        if not v.passed:
            raise EnvelopeFitFailed(f"sandwich fails at {v.counterexample}")
    return cert


def annulus_sampler(r_in: float, r_out: float, seed: int = 0):
    """Callable sampler: uniform-area points with ``r_in < |z| <= r_out``."""
    from .sampling import unit_sobol

    def draw(n):
        u = unit_sobol(2, n, seed)
        r = np.sqrt(r_in ** 2 + (r_out ** 2 - r_in ** 2) * u[:, 0])
        r = np.maximum(r, np.nextafter(r_in, np.inf))
        th = 2 * np.pi * u[:, 1]
        return {"x": np.column_stack([r * np.cos(th), r * np.sin(th)])}

    return draw
