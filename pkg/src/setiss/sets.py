"""Target sets, history windows and the set-valued norms built on them.

Three history norms are provided for a window ``x(t+s), s in [-w, 0]``:

* ``seg_sup_norm``     max over the window of the point distance ``|x|_A``;
* ``seg_infmax_norm``  inf over anchors ``k`` in A of max over the window of a
  pair discrepancy ``rho(k, x)``;
* ``running_sup``      sup over recorded times of the inf-max norm.

For Euclidean sets ``rho(k, x) = |k - x|``.  A set whose point distance is not
Euclidean supplies its own ``rho`` so that constant windows collapse to the
point distance and the sup-norm never exceeds the inf-max norm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

MEMBERSHIP_TOL = 1e-9
COARSE_POINTS = 64
GOLDEN_TOL = 1e-8
REFINE = 8


class SetError(ValueError):
    pass


class DimensionMismatch(SetError):
    pass


class EmptyWindow(SetError):
    pass


class NoParametrization(SetError):
    pass


class HorizonTooShort(SetError):
    pass


class OutOfSpan(SetError):
    pass


# ---------------------------------------------------------------------------
# history windows


@dataclass(frozen=True, eq=False)
class HistoryWindow:
    """Cubic-Hermite record of ``x`` on ``[t_end - window, t_end]``.

    ``times`` must be non-decreasing; a repeated time marks a derivative jump
    (the left record holds the incoming slope, the right one the outgoing).
    """

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.atleast_2d(np.asarray(self.states, dtype=float))
        d = np.atleast_2d(np.asarray(self.derivs, dtype=float))
        if x.shape[0] != t.size and x.shape[1] == t.size:
            x, d = x.T, d.T
        if t.size == 0:
            raise EmptyWindow("history window has no samples")
        if x.shape != d.shape or x.shape[0] != t.size:
            raise DimensionMismatch("times, states and derivatives disagree in length")
        if np.any(np.diff(t) < 0):
            raise SetError("window times must be non-decreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "derivs", d)

    @classmethod
    def constant(cls, x0, window: float, t_end: float = 0.0) -> "HistoryWindow":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        if window <= 0:
            return cls(np.array([t_end]), x0[None, :], np.zeros((1, x0.size)))
        t = np.array([t_end - window, t_end])
        return cls(t, np.vstack([x0, x0]), np.zeros((2, x0.size)))

    @classmethod
    def from_function(cls, fn: Callable, dfn: Callable, window: float, t_end: float = 0.0,
                      n: int = 64) -> "HistoryWindow":
        t = np.linspace(t_end - window, t_end, max(n, 2)) if window > 0 else np.array([t_end])
        x = np.array([np.atleast_1d(fn(ti)) for ti in t], dtype=float)
        d = np.array([np.atleast_1d(dfn(ti)) for ti in t], dtype=float)
        return cls(t, x, d)

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def window(self) -> float:
        return self.t_end - self.t_start

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __call__(self, t):
        return interpolate(self.times, self.states, self.derivs, t)

    def sample_grid(self, refine: int = REFINE) -> np.ndarray:
        """Nodes plus ``refine - 1`` interior points per step."""
        t = np.unique(self.times)
        if t.size == 1:
            return t
        frac = np.arange(refine) / refine
        inner = (t[:-1, None] + np.diff(t)[:, None] * frac[None, :]).ravel()
        return np.concatenate([inner, t[-1:]])

    def samples(self, refine: int = REFINE) -> np.ndarray:
        return self(self.sample_grid(refine))


def hermite(x0, x1, d0, d1, h, u):
    """Cubic Hermite on one step; ``u`` in [0, 1] (broadcast over leading axes)."""
    u2 = u * u
    u3 = u2 * u
    h00 = 2 * u3 - 3 * u2 + 1
    h10 = u3 - 2 * u2 + u
    h01 = -2 * u3 + 3 * u2
    h11 = u3 - u2
    return h00 * x0 + h10 * h * d0 + h01 * x1 + h11 * h * d1


def interpolate(times: np.ndarray, states: np.ndarray, derivs: np.ndarray, t):
    """Dense output at ``t`` (scalar or 1-d array) without extrapolation."""
    tq = np.atleast_1d(np.asarray(t, dtype=float))
    span = max(abs(times[0]), abs(times[-1]), 1.0) * 1e-12
    if np.any(tq < times[0] - span) or np.any(tq > times[-1] + span):
        raise OutOfSpan(f"query outside recorded span [{times[0]}, {times[-1]}]")
    tq = np.clip(tq, times[0], times[-1])
    if times.size == 1:
        out = np.repeat(states[:1], tq.size, axis=0)
    else:
        # right-continuous: at a duplicated node the later record wins
        i = np.clip(np.searchsorted(times, tq, side="right") - 1, 0, times.size - 2)
        h = times[i + 1] - times[i]
        safe = np.where(h > 0, h, 1.0)
        u = np.where(h > 0, (tq - times[i]) / safe, 0.0)[:, None]
        out = hermite(states[i], states[i + 1], derivs[i], derivs[i + 1], h[:, None], u)
        exact = tq[:, None] == times[i + 1][:, None]
        out = np.where(exact, states[i + 1], out)
        exact0 = tq[:, None] == times[i][:, None]
        out = np.where(exact0, states[i], out)
    return out[0] if np.ndim(t) == 0 else out


# ---------------------------------------------------------------------------
# target sets


def _euclid_rho(k: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x - k, axis=-1)


@dataclass(frozen=True, eq=False)
class TargetSet:
    """Closed set described by a vectorised distance oracle.

    Parameters
    ----------
    distance : callable
        ``(..., n) -> (...)`` non-negative distance.
    dim : int
        Ambient dimension.
    parametrization : callable, optional
        ``(N, p) -> (N, n)`` map from the box ``param_box`` into the set.
    extra_points : array, optional
        Isolated members added to the inf search (e.g. the origin).
    rho : callable, optional
        Pair discrepancy ``(k, x) -> (...)`` for the inf-max norm.  Defaults to
        the Euclidean ``|k - x|``.
    euclidean : bool
        Whether ``distance`` is the Euclidean point-to-set distance (and hence
        1-Lipschitz).
    """

    distance: Callable
    dim: int
    parametrization: Callable | None = None
    param_box: tuple = ()
    extra_points: np.ndarray | None = None
    rho: Callable = _euclid_rho
    euclidean: bool = True
    membership_tol: float = MEMBERSHIP_TOL
    description: str = ""
    periodic: tuple = ()

    def contains(self, x) -> np.ndarray:
        return dist_point(self, x) <= self.membership_tol

    @property
    def has_parametrization(self) -> bool:
        return self.parametrization is not None or self.extra_points is not None


def origin(dim: int) -> TargetSet:
    return TargetSet(
        distance=lambda x: np.linalg.norm(x, axis=-1),
        dim=dim,
        extra_points=np.zeros((1, dim)),
        description=f"origin in R^{dim}",
    )


def stuart_landau_distance(alpha: float) -> Callable:
    seam = 0.7 * math.sqrt(alpha)

    def dist(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        r = np.sqrt(r2)
        return np.where(r <= seam, r, np.sqrt(np.abs(r2 - alpha)))

    return dist


def stuart_landau_set(alpha: float = 1.0) -> TargetSet:
    """Union of the circle ``|z| = sqrt(alpha)`` and the origin, in R^2.

    The point distance is the piecewise law that switches from ``|z|`` to
    ``sqrt(||z|^2 - alpha|)`` at ``|z| = 0.7 sqrt(alpha)``; it jumps there,
    so it is not 1-Lipschitz.
    """
    if alpha <= 0:
        raise SetError("alpha must be positive")
    d = stuart_landau_distance(alpha)
    root = math.sqrt(alpha)

    def circle(p):
        th = np.asarray(p, dtype=float)[..., 0]
        return root * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def rho(k, x):
        k = np.asarray(k, dtype=float)
        x = np.asarray(x, dtype=float)
        k, x = np.broadcast_arrays(k, x)
        kn = np.linalg.norm(k, axis=-1)
        xn = np.linalg.norm(x, axis=-1)
        at_origin = kn < 0.5 * root
        radial = np.sqrt(np.abs(xn * xn - alpha))
        safe = np.where(xn > 0, xn, 1.0)[..., None]
        xhat = np.where(xn[..., None] > 0, x / safe, 0.0)
        angular = np.linalg.norm(k - root * xhat, axis=-1)
        return np.where(at_origin, np.maximum(xn, d(x)), np.maximum(radial, angular))

    return TargetSet(
        distance=d,
        dim=2,
        parametrization=circle,
        param_box=((0.0, 2 * math.pi),),
        extra_points=np.zeros((1, 2)),
        rho=rho,
        euclidean=False,
        # the square root turns ulp-level error in |z|^2 - alpha into ~1e-8
        membership_tol=1e-7 * max(1.0, root),
        description=f"stuart_landau:{alpha:g}",
        periodic=(True,),
    )


def custom_set(distance: Callable, dim: int, parametrization: Callable | None = None,
               param_box=(), extra_points=None, description: str = "custom") -> TargetSet:
    pts = None if extra_points is None else np.atleast_2d(np.asarray(extra_points, dtype=float))
    return TargetSet(distance=distance, dim=dim, parametrization=parametrization,
                     param_box=tuple(tuple(b) for b in param_box), extra_points=pts,
                     description=description, periodic=tuple(False for _ in param_box))


_REGISTRY: dict[str, TargetSet] = {}


def register_set(name: str, target: TargetSet) -> None:
    _REGISTRY[name] = target


def set_from_name(name: str, dim: int | None = None) -> TargetSet:
    """Resolve ``origin``, ``stuart_landau:<alpha>`` or a registered name."""
    if name == "origin":
        return origin(2 if dim is None else dim)
    if name.startswith("stuart_landau"):
        _, _, a = name.partition(":")
        return stuart_landau_set(float(a) if a else 1.0)
    if name in _REGISTRY:
        return _REGISTRY[name]
    raise SetError(f"unknown target set {name!r}")


# ---------------------------------------------------------------------------
# norms


def dist_point(A: TargetSet, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != A.dim:
        raise DimensionMismatch(f"state has dimension {x.shape[-1]}, set lives in R^{A.dim}")
    out = np.asarray(A.distance(x), dtype=float)
    return float(out) if out.ndim == 0 else out


def _window_points(h: HistoryWindow, refine: int = REFINE) -> np.ndarray:
    if h.times.size == 0:
        raise EmptyWindow("empty window")
    return h.samples(refine)


def seg_sup_norm(A: TargetSet, h: HistoryWindow, refine: int = REFINE) -> float:
    """``max_s |x(t+s)|_A`` over nodes plus ``refine``-fold interior points."""
    pts = _window_points(h, refine)
    return float(np.max(dist_point(A, pts)))


def _max_rho(A: TargetSet, anchors: np.ndarray, pts: np.ndarray) -> np.ndarray:
    # anchors (K, n), pts (M, n) -> (K,)
    return np.max(A.rho(anchors[:, None, :], pts[None, :, :]), axis=1)


def _golden(fn: Callable[[float], float], a: float, b: float, tol: float) -> tuple[float, float]:
    g = (math.sqrt(5) - 1) / 2
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fn(d)
    x = 0.5 * (a + b)
    return x, fn(x)


def seg_infmax_norm(A: TargetSet, h: HistoryWindow, refine: int = REFINE,
                    coarse: int = COARSE_POINTS, tol: float = GOLDEN_TOL) -> float:
    """``inf_k max_s rho(k, x(t+s))`` by coarse grid plus golden section."""
    if not A.has_parametrization:
        raise NoParametrization(f"set {A.description!r} has no parametrization")
    pts = _window_points(h, refine)
    if pts.shape[-1] != A.dim:
        raise DimensionMismatch("window dimension differs from the set")
    best = math.inf
    if A.extra_points is not None:
        best = float(np.min(_max_rho(A, A.extra_points, pts)))
    if A.parametrization is None or best == 0.0:
        return best
    box = np.asarray(A.param_box, dtype=float)
    p = box.shape[0]
    axes = []
    for j in range(p):
        lo, hi = box[j]
        periodic = j < len(A.periodic) and A.periodic[j]
        axes.append(np.linspace(lo, hi, coarse, endpoint=not periodic))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p)
    vals = _max_rho(A, A.parametrization(mesh), pts)
    i = int(np.argmin(vals))
    theta = mesh[i].copy()
    cur = float(vals[i])
    # coordinate-wise golden section around the best coarse cell
    for _ in range(3 if p > 1 else 1):
        for j in range(p):
            step = (box[j, 1] - box[j, 0]) / (coarse - (0 if (j < len(A.periodic) and A.periodic[j]) else 1))
            a, b = theta[j] - step, theta[j] + step
            if not (j < len(A.periodic) and A.periodic[j]):
                a, b = max(a, box[j, 0]), min(b, box[j, 1])

            def f1(v, j=j):
                q = theta.copy()
                q[j] = v
                return float(_max_rho(A, A.parametrization(q[None, :]), pts)[0])

            v, fv = _golden(f1, a, b, tol)
            if fv < cur:
                theta[j], cur = v, fv
    return min(best, cur)


def history_norm(A: TargetSet, h: HistoryWindow) -> tuple[float, str]:
    """Inf-max norm when available, else the sup norm flagged as a lower bound."""
    if A.has_parametrization:
        return seg_infmax_norm(A, h), "exact"
    return seg_sup_norm(A, h), "lower_bound"


@dataclass(frozen=True)
class RunningSup:
    value: float
    attained_at: float
    status: str
    times: np.ndarray = field(repr=False, default=None)
    values: np.ndarray = field(repr=False, default=None)


def window_norms(A: TargetSet, traj, times, window: float | None = None) -> tuple[np.ndarray, str]:
    """``|x_t|_A`` at each of ``times`` (window defaults to the system delay)."""
    w = traj.delay if window is None else window
    status = "exact" if A.has_parametrization else "lower_bound"
    out = np.empty(len(times))
    if w <= 0:
        pts = traj(np.asarray(times, dtype=float))
        return np.atleast_1d(dist_point(A, pts)), "exact"
    for j, t in enumerate(times):
        hw = traj.history_at(t, w)
        out[j] = seg_infmax_norm(A, hw) if status == "exact" else seg_sup_norm(A, hw)
    return out, status


def running_sup(A: TargetSet, traj, t0: float | None = None, max_samples: int = 2000) -> RunningSup:
    """``sup_{t >= t0} |x_t|_A`` over the recorded horizon.

    Sampled at every node when the record is short, otherwise at an evenly
    strided subset of nodes (at most ``max_samples``).
    """
    t0 = traj.t0 if t0 is None else t0
    if t0 < traj.t0 - 1e-12 or t0 > traj.T:
        raise HorizonTooShort(f"t0={t0} outside [{traj.t0}, {traj.T}]")
    times = traj.node_times(t0)
    if times.size > max_samples:
        idx = np.unique(np.linspace(0, times.size - 1, max_samples).round().astype(int))
        times = times[idx]
    vals, status = window_norms(A, traj, times)
    i = int(np.argmax(vals))
    return RunningSup(float(vals[i]), float(times[i]), status, times, vals)
