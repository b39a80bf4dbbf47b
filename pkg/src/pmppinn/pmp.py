"""Necessary conditions of the minimum-exposure problem.

Kinematics are x1' = v cos(psi), x2' = v sin(psi) and the running cost is
lambda + c(x, t).  Everything here is a pure function; ``hamiltonian`` and
``heading_rate`` also accept :class:`pmppinn.autodiff.Var` operands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .threat_field import ThreatField


def _trig(x):
    if isinstance(x, autodiff.Var):
        return autodiff.cos(x), autodiff.sin(x)
    return np.cos(x), np.sin(x)


@dataclass(frozen=True)
class Scenario:
    """A single two-point problem.  Initial time is always 0."""

    x0: tuple[float, float]
    xf: tuple[float, float]
    field: ThreatField = field(default_factory=ThreatField)
    speed: float = 10.0
    bolza: float = 0.0
    workspace: tuple[float, float] = (-15.0, 15.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "xf", tuple(float(v) for v in self.xf))
        if not self.speed > 0.0:
            raise ValueError("speed must be positive")
        if self.bolza < 0.0:
            raise ValueError("the Bolza constant must be non-negative")
        lo, hi = self.workspace
        if not lo < hi:
            raise ValueError(f"bad workspace bounds {self.workspace}")
        for name in ("x0", "xf"):
            p = getattr(self, name)
            if not all(lo <= v <= hi for v in p):
                raise ValueError(f"{name}={p} lies outside the workspace {self.workspace}")
        if self.x0 == self.xf:
            raise ValueError("initial and final positions coincide")

    @property
    def distance(self) -> float:
        return math.hypot(self.xf[0] - self.x0[0], self.xf[1] - self.x0[1])

    @property
    def straight_time(self) -> float:
        return self.distance / self.speed

    @property
    def static(self) -> bool:
        return self.field.is_static

    def with_endpoints(self, x0, xf) -> Scenario:
        return Scenario(tuple(x0), tuple(xf), self.field, self.speed, self.bolza, self.workspace)


@dataclass(frozen=True)
class PmpPoint:
    x: tuple
    psi: object
    p: tuple
    t: object = 0.0


def hamiltonian(s: Scenario, pt: PmpPoint):
    """H = lambda + c(x, t) + v (p1 cos psi + p2 sin psi)."""
    cos_psi, sin_psi = _trig(pt.psi)
    c = s.field.value(pt.x, pt.t)
    return s.bolza + c + s.speed * (pt.p[0] * cos_psi + pt.p[1] * sin_psi)


def stationary_heading(p) -> float:
    """Heading minimising H for co-state ``p``: atan2(-p2, -p1).

    atan(p2/p1) gives both the minimum and the maximum of p . (cos, sin);
    the negated atan2 picks the minimising one.
    """
    p1, p2 = float(p[0]), float(p[1])
    if p1 == 0.0 and p2 == 0.0:
        raise ValueError("heading is undefined for a zero co-state")
    return math.atan2(-p2, -p1)


def costate_from_heading(s: Scenario, x, psi, t=0.0):
    """Co-state consistent with H = 0 and the minimising branch."""
    c = s.field.value(x, t)
    k = -(s.bolza + c) / s.speed
    return k * np.cos(psi), k * np.sin(psi)


def hd_profile(s: Scenario, tf: float, tau, xs) -> np.ndarray:
    """Desired Hamiltonian at each node of a uniform tau grid.

    Starts from H = 0 at tau = 1 and integrates dH/dt = dc/dt backwards
    with the trapezoid rule; dc/dt is evaluated at (x^j, tau^j tf).
    """
    tau = np.asarray(tau, dtype=float)
    xs = np.asarray(xs, dtype=float)
    n = tau.size
    if n < 2:
        raise ValueError("need at least two grid nodes")
    dtau = np.diff(tau)
    if not np.allclose(dtau, dtau[0], rtol=1e-9, atol=1e-12) or dtau[0] <= 0:
        raise ValueError("tau grid must be uniform and increasing")
    if s.static:
        return np.zeros(n)
    ct = np.asarray(s.field.dc_dt(xs, tau * tf), dtype=float)
    return backward_trapezoid(ct, tf, float(dtau[0]))


def backward_trapezoid(ct, tf, dtau):
    """-tf * sum_{j >= i} (ct[j+1] + ct[j]) / 2 * dtau along the last axis.

    Works on numpy arrays and torch tensors (``tf`` broadcasts against all
    but the last axis).
    """
    seg = 0.5 * (ct[..., 1:] + ct[..., :-1]) * dtau
    if isinstance(ct, np.ndarray):
        tail = np.cumsum(seg[..., ::-1], axis=-1)[..., ::-1]
        zero = np.zeros(ct.shape[:-1] + (1,))
        out = np.concatenate([tail, zero], axis=-1)
        return -np.asarray(tf)[..., None] * out if np.ndim(tf) else -tf * out
    import torch

    tail = torch.flip(torch.cumsum(torch.flip(seg, [-1]), -1), [-1])
    out = torch.cat([tail, torch.zeros_like(ct[..., :1])], dim=-1)
    if torch.is_tensor(tf) and tf.dim() > 0:
        return -tf.unsqueeze(-1) * out
    return -tf * out


def heading_rate(s: Scenario, x, psi, t=0.0):
    """psi' from differentiating the optimal heading with H = 0 (static fields).

    psi' = v (cos psi dc/dx2 - sin psi dc/dx1) / (lambda + c)
    """
    if not s.static:
        raise ValueError("heading-rate reduction requires a static threat field")
    g1, g2 = s.field.grad_x(x, t)
    denom = s.bolza + s.field.value(x, t)
    dv = denom.value if isinstance(denom, autodiff.Var) else denom
    if np.any(np.asarray(dv) <= 0.0):
        raise ZeroDivisionError("lambda + c must be positive for the heading-rate reduction")
    cos_psi, sin_psi = _trig(psi)
    return s.speed * (cos_psi * g2 - sin_psi * g1) / denom


def path_cost(s: Scenario, xs, tf: float, tau=None) -> float:
    """Right Riemann sum tf * sum_{i >= 2} (lambda + c(x^i, tau^i tf)) dtau.

    ``xs`` are samples on a uniform tau grid over [0, 1] (inclusive).
    """
    xs = np.asarray(xs, dtype=float)
    n = xs.shape[0]
    if n < 2:
        raise ValueError("path cost needs at least two samples")
    if tau is None:
        tau = np.linspace(0.0, 1.0, n)
    tau = np.asarray(tau, dtype=float)
    dtau = np.diff(tau)
    if not np.allclose(dtau, dtau[0], rtol=1e-9, atol=1e-12):
        raise ValueError("tau grid must be uniform")
    c = np.asarray(s.field.value(xs[1:], tau[1:] * tf), dtype=float)
    return float(tf * np.sum(c + s.bolza) * dtau[0])
