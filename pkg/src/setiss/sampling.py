"""Seeded scrambled-Sobol samplers over product boxes.

A sampler is a list of blocks, each feeding one role (``x``, ``x_d`` or
``w``).  ``box`` blocks draw uniformly from an axis-aligned box; ``radial``
blocks draw a magnitude log-uniformly in ``[r_min, r_max]`` and a uniform
direction, which puts many samples at small input sizes where implication
premises are easiest to satisfy.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

ROLES = ("x", "x_d", "w")


@dataclass(frozen=True)
class Block:
    role: str
    kind: str
    dim: int
    lo: tuple = ()
    hi: tuple = ()
    r_max: float = 1.0
    r_min: float = 0.0
    scale: tuple = ()

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        if self.kind not in ("box", "radial"):
            raise ValueError("block kind must be 'box' or 'radial'")
        if self.kind == "radial" and not (0 < self.r_min < self.r_max):
            raise ValueError("radial block needs 0 < r_min < r_max")

    @property
    def n_unit(self) -> int:
        if self.kind == "box":
            return self.dim
        return 1 + (1 if self.dim <= 2 else self.dim)

    def transform(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "box":
            lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
            return lo + (hi - lo) * u
        mag = self.r_min * (self.r_max / self.r_min) ** u[:, 0]
        if self.dim == 1:
            direction = np.where(u[:, 1] < 0.5, -1.0, 1.0)[:, None]
        elif self.dim == 2:
            th = 2 * np.pi * u[:, 1]
            direction = np.column_stack([np.cos(th), np.sin(th)])
        else:
            g = ndtri(np.clip(u[:, 1:], 1e-12, 1 - 1e-12))
            direction = g / np.linalg.norm(g, axis=1, keepdims=True)
        out = mag[:, None] * direction
        if self.scale:
            out = out * np.asarray(self.scale, float)
        return out

    def describe(self) -> dict:
        if self.kind == "box":
            return {"role": self.role, "kind": "box", "lo": list(self.lo), "hi": list(self.hi)}
        return {"role": self.role, "kind": "radial", "dim": self.dim,
                "r_min": self.r_min, "r_max": self.r_max}


def box(role: str, lo, hi) -> Block:
    lo, hi = tuple(float(v) for v in lo), tuple(float(v) for v in hi)
    if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
        raise ValueError("box needs lo < hi componentwise")
    return Block(role, "box", len(lo), lo, hi)


def radial(role: str, dim: int, r_max: float, r_min_ratio: float = 1e-6) -> Block:
    return Block(role, "radial", dim, r_max=float(r_max), r_min=float(r_max) * r_min_ratio)


@dataclass(frozen=True)
class SobolSampler:
    blocks: tuple
    seed: int = 0

    @property
    def n_unit(self) -> int:
        return sum(b.n_unit for b in self.blocks)

    def sample(self, n: int) -> dict:
        if n < 1:
            raise ValueError("n must be positive")
        eng = qmc.Sobol(self.n_unit, scramble=True, seed=self.seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            u = eng.random(n)
        parts: dict[str, list] = {r: [] for r in ROLES}
        j = 0
        for b in self.blocks:
            parts[b.role].append(b.transform(u[:, j:j + b.n_unit]))
            j += b.n_unit
        return {r: np.hstack(v) for r, v in parts.items() if v}

    def describe(self) -> dict:
        return {"seed": self.seed, "blocks": [b.describe() for b in self.blocks]}


def unit_sobol(dim: int, n: int, seed: int = 0) -> np.ndarray:
    eng = qmc.Sobol(dim, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return eng.random(n)


def log2_ceil(n: int) -> int:
    return max(0, math.ceil(math.log2(n)))
