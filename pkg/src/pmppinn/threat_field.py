"""Radial-basis threat fields with analytic derivatives.

A field is

    c(x, t) = offset + amplitude * sum_i s_i(t) * exp(-0.5 (x - a_i)^T L_i (x - a_i))

with ``s_i(t) = a0_i`` for a static field and
``s_i(t) = a0_i / 2 * (1.5 + cos(a0_i t))`` for the cosine-modulated one.

The evaluation methods are written with plain arithmetic plus ``exp``/``sin``/
``cos`` so the same code runs on floats, numpy arrays, torch tensors and
:class:`pmppinn.autodiff.Var` scalars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import autodiff

STATIC = "static"
COSINE = "cosine"
TEMPORAL_MODES = (STATIC, COSINE)


def _ops(*xs: Any):
    """Pick the module providing exp/sin/cos for the given operands."""
    for x in xs:
        if isinstance(x, autodiff.Var):
            return autodiff
        mod = type(x).__module__
        if mod.startswith("torch"):
            import torch

            return torch
    return np


def _call(fn, scalar_fn, v):
    return scalar_fn(v) if isinstance(v, (int, float)) else fn(v)


def _split(x) -> tuple[Any, Any]:
    """Accept (x1, x2) pairs or arrays whose last axis has length 2."""
    if isinstance(x, (tuple, list)):
        x1, x2 = x
        return x1, x2
    return x[..., 0], x[..., 1]


@dataclass(frozen=True)
class RadialBasis:
    """One bump: peak ``a0``, centre ``(a1, a2)`` [m], SPD shape matrix [1/m^2]."""

    peak: float
    center: tuple[float, float]
    shape: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))

    def __post_init__(self) -> None:
        (l11, l12), (l21, l22) = self.shape
        if l12 != l21:
            raise ValueError(f"shape matrix is not symmetric: {self.shape}")
        if not (l11 > 0.0 and l11 * l22 - l12 * l12 > 0.0):
            raise ValueError(f"shape matrix is not positive definite: {self.shape}")
        if not all(math.isfinite(v) for v in (self.peak, *self.center, l11, l12, l22)):
            raise ValueError("radial basis constants must be finite")

    @classmethod
    def from_row(cls, row: Sequence[float]) -> RadialBasis:
        """Build from ``(a0, a1, a2, L11, L12, L22)``."""
        a0, a1, a2, l11, l12, l22 = (float(v) for v in row)
        return cls(a0, (a1, a2), ((l11, l12), (l12, l22)))

    def as_row(self) -> tuple[float, ...]:
        (l11, l12), (_, l22) = self.shape
        return (self.peak, self.center[0], self.center[1], l11, l12, l22)


@dataclass(frozen=True)
class ThreatField:
    bases: tuple[RadialBasis, ...] = ()
    amplitude: float = 5.0
    offset: float = 1.0
    temporal: str = STATIC

    def __post_init__(self) -> None:
        object.__setattr__(self, "bases", tuple(self.bases))
        if self.temporal not in TEMPORAL_MODES:
            raise ValueError(f"temporal mode must be one of {TEMPORAL_MODES}")

    @property
    def is_static(self) -> bool:
        return self.temporal == STATIC or not self.bases

    # -- per-basis pieces -------------------------------------------------

    def _bump(self, b: RadialBasis, x1, x2, ops):
        """exp(-q/2) and the two components of L (x - a)."""
        (l11, l12), (_, l22) = b.shape
        d1 = x1 - b.center[0]
        d2 = x2 - b.center[1]
        ld1 = l11 * d1 + l12 * d2
        ld2 = l12 * d1 + l22 * d2
        g = ops.exp(-0.5 * (d1 * ld1 + d2 * ld2))
        return g, ld1, ld2

    def _scale(self, b: RadialBasis, t, ops):
        if self.temporal == STATIC:
            return b.peak
        a0 = b.peak
        return 0.5 * a0 * (1.5 + _call(ops.cos, math.cos, a0 * t))

    def _scale_dt(self, b: RadialBasis, t, ops):
        a0 = b.peak
        return -0.5 * a0 * a0 * _call(ops.sin, math.sin, a0 * t)

    # -- public evaluation ------------------------------------------------

    def value(self, x, t=0.0):
        """Threat c(x, t)."""
        x1, x2 = _split(x)
        ops = _ops(x1, x2, t)
        total = 0.0
        for b in self.bases:
            g, _, _ = self._bump(b, x1, x2, ops)
            total = total + self._scale(b, t, ops) * g
        return self.offset + self.amplitude * total + 0.0 * x1

    def grad_x(self, x, t=0.0):
        """(dc/dx1, dc/dx2); each basis adds -amplitude * s_i g_i L_i (x - a_i)."""
        x1, x2 = _split(x)
        ops = _ops(x1, x2, t)
        g1 = 0.0 * x1
        g2 = 0.0 * x2
        for b in self.bases:
            g, ld1, ld2 = self._bump(b, x1, x2, ops)
            w = self.amplitude * self._scale(b, t, ops) * g
            g1 = g1 - w * ld1
            g2 = g2 - w * ld2
        return g1, g2

    def dc_dt(self, x, t=0.0):
        """Partial time derivative; identically zero for a static field."""
        x1, x2 = _split(x)
        if self.temporal == STATIC:
            return 0.0 * x1
        ops = _ops(x1, x2, t)
        total = 0.0 * x1
        for b in self.bases:
            g, _, _ = self._bump(b, x1, x2, ops)
            total = total + self._scale_dt(b, t, ops) * g
        return self.amplitude * total

    # -- checks -----------------------------------------------------------

    def lower_bound(self, x) -> np.ndarray:
        """Pointwise lower bound of c over all t >= 0 (numpy inputs)."""
        x1, x2 = _split(np.asarray(x, dtype=float))
        total = np.zeros_like(x1)
        for b in self.bases:
            g, _, _ = self._bump(b, x1, x2, np)
            if self.temporal == STATIC:
                lo = b.peak
            else:
                # a0/2 * (1.5 + cos) ranges over a0 * [0.25, 1.25]
                lo = min(0.25 * b.peak, 1.25 * b.peak)
            total = total + lo * g
        return self.offset + self.amplitude * total

    def validate(self, bounds: tuple[float, float], resolution: int = 121) -> None:
        """Raise ``ValueError`` unless c > 0 everywhere on a workspace grid."""
        lo, hi = bounds
        g = np.linspace(lo, hi, resolution)
        X1, X2 = np.meshgrid(g, g, indexing="ij")
        worst = float(np.min(self.lower_bound(np.stack([X1, X2], axis=-1))))
        if not worst > 0.0:
            raise ValueError(
                f"threat field is not positive over the workspace (min bound {worst:.4g})"
            )

    def to_dict(self) -> dict:
        return {
            "bases": [list(b.as_row()) for b in self.bases],
            "amplitude": self.amplitude,
            "offset": self.offset,
            "temporal": self.temporal,
        }


def random_field(
    rng: np.random.Generator,
    n_bases: int,
    bounds: tuple[float, float] = (-15.0, 15.0),
    temporal: str = STATIC,
    peak_range: tuple[float, float] = (0.5, 1.5),
    spread_range: tuple[float, float] = (3.0, 6.0),
) -> ThreatField:
    """Draw a positive-peak field; spreads are standard deviations in metres."""
    lo, hi = bounds
    bases = []
    for _ in range(n_bases):
        peak = rng.uniform(*peak_range)
        center = rng.uniform(lo * 0.8, hi * 0.8, size=2)
        s1, s2 = rng.uniform(*spread_range, size=2)
        angle = rng.uniform(0.0, math.pi)
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        lam = rot @ np.diag([1.0 / s1**2, 1.0 / s2**2]) @ rot.T
        l12 = float(0.5 * (lam[0, 1] + lam[1, 0]))
        bases.append(
            RadialBasis(
                float(peak),
                (float(center[0]), float(center[1])),
                ((float(lam[0, 0]), l12), (l12, float(lam[1, 1]))),
            )
        )
    return ThreatField(tuple(bases), temporal=temporal)
