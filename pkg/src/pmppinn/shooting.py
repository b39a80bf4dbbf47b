"""Multi-start shooting on the initial heading for static threat fields.

With a static field the co-states can be eliminated: H = 0 together with the
minimising heading gives psi' = v (cos psi c_x2 - sin psi c_x1) / (lambda + c).
The reduced system (x1, x2, psi) is integrated with classic RK4 until the
closest approach to the target, and the initial heading is found by
bracketing and bisecting the signed miss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import pmp
from .pmp import Scenario

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ShootConfig:
    n_headings: int = 64
    dt: float = 1e-3
    tolerance: float = 0.05  # arrival tolerance [m]
    max_time_factor: float = 3.0  # times the straight-line flight time
    bisections: int = 60

    def __post_init__(self) -> None:
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not self.tolerance > 0.0:
            raise ValueError("arrival tolerance must be positive")
        if self.n_headings < 2:
            raise ValueError("need at least two initial headings")


@dataclass
class ShotResult:
    psi0: float
    t: np.ndarray
    x: np.ndarray  # (n, 2)
    psi: np.ndarray
    miss: float  # distance to target at closest approach [m]
    signed_miss: float
    arrival_time: float
    cost: float
    converged: bool
    candidates: list = field(default_factory=list)  # (psi0, miss, cost) of refined roots

    def costates(self, scenario: Scenario) -> np.ndarray:
        p1, p2 = pmp.costate_from_heading(scenario, self.x, self.psi)
        return np.column_stack([p1, p2])

    def hamiltonian(self, scenario: Scenario) -> np.ndarray:
        p = self.costates(scenario)
        c = scenario.field.value(self.x)
        return scenario.bolza + c + scenario.speed * (p[:, 0] * np.cos(self.psi) + p[:, 1] * np.sin(self.psi))


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _field(x1, x2, bases, amp, off):
    c = 0.0
    g1 = 0.0
    g2 = 0.0
    for k in range(bases.shape[0]):
        a0 = bases[k, 0]
        d1 = x1 - bases[k, 1]
        d2 = x2 - bases[k, 2]
        ld1 = bases[k, 3] * d1 + bases[k, 4] * d2
        ld2 = bases[k, 4] * d1 + bases[k, 5] * d2
        g = a0 * math.exp(-0.5 * (d1 * ld1 + d2 * ld2))
        c += g
        g1 -= g * ld1
        g2 -= g * ld2
    return off + amp * c, amp * g1, amp * g2


@numba.njit(cache=True)
def _rhs(y, bases, amp, off, v, lam):
    c, g1, g2 = _field(y[0], y[1], bases, amp, off)
    cp = math.cos(y[2])
    sp = math.sin(y[2])
    out = np.empty(3)
    out[0] = v * cp
    out[1] = v * sp
    out[2] = v * (cp * g2 - sp * g1) / (lam + c)
    return out


@numba.njit(cache=True)
def _rk4(y, h, bases, amp, off, v, lam):
    k1 = _rhs(y, bases, amp, off, v, lam)
    k2 = _rhs(y + 0.5 * h * k1, bases, amp, off, v, lam)
    k3 = _rhs(y + 0.5 * h * k2, bases, amp, off, v, lam)
    k4 = _rhs(y + h * k3, bases, amp, off, v, lam)
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@numba.njit(cache=True)
def _approach(y, xf1, xf2):
    # proportional to d/dt |x - xf|^2
    return (y[0] - xf1) * math.cos(y[2]) + (y[1] - xf2) * math.sin(y[2])


@numba.njit(cache=True)
def _shoot(x01, x02, psi0, xf1, xf2, dt, t_max, bases, amp, off, v, lam, store):
    """Integrate until the first closest approach after moving toward the target.

    Returns (found, arrival time, signed miss, cost, n_samples, samples) where
    samples rows are (t, x1, x2, psi).  Cost is the right Riemann sum of
    lambda + c over the (uniform except the last) steps.
    """
    n_max = int(math.ceil(t_max / dt)) + 2
    samples = np.empty((n_max if store else 1, 4))
    y = np.array([x01, x02, psi0])
    t = 0.0
    if store:
        samples[0, 0] = 0.0
        samples[0, 1:] = y
    n = 1
    cost = 0.0
    f_prev = _approach(y, xf1, xf2)
    approached = f_prev < 0.0
    found = False
    while t < t_max:
        y_new = _rk4(y, dt, bases, amp, off, v, lam)
        f_new = _approach(y_new, xf1, xf2)
        if approached and f_new >= 0.0:
            # closest approach inside this step: bisect the partial step length
            lo = 0.0
            hi = 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if _approach(_rk4(y, mid * dt, bases, amp, off, v, lam), xf1, xf2) < 0.0:
                    lo = mid
                else:
                    hi = mid
            h = 0.5 * (lo + hi) * dt
            y_new = _rk4(y, h, bases, amp, off, v, lam)
            t += h
            c, _, _ = _field(y_new[0], y_new[1], bases, amp, off)
            cost += h * (lam + c)
            if store:
                samples[n, 0] = t
                samples[n, 1:] = y_new
            n += 1
            y = y_new
            found = True
            break
        if f_new < 0.0:
            approached = True
        y = y_new
        t += dt
        c, _, _ = _field(y[0], y[1], bases, amp, off)
        cost += dt * (lam + c)
        if store:
            samples[n, 0] = t
            samples[n, 1:] = y
        n += 1
    miss = math.cos(y[2]) * (y[1] - xf2) - math.sin(y[2]) * (y[0] - xf1)
    return found, t, miss, cost, n, samples


@numba.njit(cache=True)
def _sweep(x01, x02, psis, xf1, xf2, dt, t_max, bases, amp, off, v, lam):
    m = psis.shape[0]
    found = np.zeros(m, dtype=np.bool_)
    misses = np.empty(m)
    costs = np.empty(m)
    times = np.empty(m)
    for i in range(m):
        ok, t, miss, cost, _, _ = _shoot(x01, x02, psis[i], xf1, xf2, dt, t_max, bases, amp, off, v, lam, False)
        found[i] = ok
        misses[i] = miss
        costs[i] = cost
        times[i] = t
    return found, misses, costs, times


# ---------------------------------------------------------------------------
# Python API
# ---------------------------------------------------------------------------


def _pack(s: Scenario) -> tuple:
    if not s.static:
        raise ValueError("shooting on the reduced system requires a static threat field")
    rows = [b.as_row() for b in s.field.bases]
    bases = np.array(rows, dtype=float).reshape(len(rows), 6)
    grid = np.linspace(s.workspace[0], s.workspace[1], 121)
    X1, X2 = np.meshgrid(grid, grid, indexing="ij")
    if np.min(s.field.lower_bound(np.stack([X1, X2], -1))) + s.bolza <= 0.0:
        raise ValueError("lambda + c must stay positive for the heading-rate reduction")
    return bases, float(s.field.amplitude), float(s.field.offset), float(s.speed), float(s.bolza)


def _t_max(s: Scenario, config: ShootConfig) -> float:
    return config.max_time_factor * s.straight_time


def integrate(s: Scenario, psi0: float, config: ShootConfig | None = None) -> ShotResult:
    """One shot from ``s.x0`` with initial heading ``psi0``."""
    config = config or ShootConfig()
    bases, amp, off, v, lam = _pack(s)
    found, t, miss, cost, n, samples = _shoot(
        s.x0[0], s.x0[1], float(psi0), s.xf[0], s.xf[1], config.dt, _t_max(s, config),
        bases, amp, off, v, lam, True,
    )
    samples = samples[:n]
    dist = math.hypot(samples[-1, 1] - s.xf[0], samples[-1, 2] - s.xf[1])
    return ShotResult(
        psi0=float(psi0),
        t=samples[:, 0].copy(),
        x=samples[:, 1:3].copy(),
        psi=samples[:, 3].copy(),
        miss=dist,
        signed_miss=float(miss) if found else math.nan,
        arrival_time=float(t),
        cost=float(cost),
        converged=bool(found and dist <= config.tolerance),
    )


def propagate(s: Scenario, psi0: float, t_end: float, dt: float) -> np.ndarray:
    """State (x1, x2, psi) after integrating for ``t_end`` with step ``dt``."""
    bases, amp, off, v, lam = _pack(s)
    n = int(round(t_end / dt))
    y = np.array([s.x0[0], s.x0[1], float(psi0)])
    for _ in range(n):
        y = _rk4(y, dt, bases, amp, off, v, lam)
    return y


def sweep(s: Scenario, psis, config: ShootConfig | None = None):
    """Vectorised shots without trajectory storage.

    Returns arrays (found, signed miss, cost, arrival time); for shots that
    never turn toward the target ``found`` is False.
    """
    config = config or ShootConfig()
    bases, amp, off, v, lam = _pack(s)
    psis = np.ascontiguousarray(psis, dtype=float)
    return _sweep(s.x0[0], s.x0[1], psis, s.xf[0], s.xf[1], config.dt, _t_max(s, config),
                  bases, amp, off, v, lam)


def _bisect(s: Scenario, lo: float, hi: float, f_lo: float, config: ShootConfig) -> float:
    for _ in range(config.bisections):
        mid = 0.5 * (lo + hi)
        found, miss, _, _ = sweep(s, np.array([mid]), config)
        if not found[0]:
            return math.nan
        if (miss[0] < 0.0) == (f_lo < 0.0):
            lo, f_lo = mid, miss[0]
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def solve(s: Scenario, config: ShootConfig | None = None) -> ShotResult:
    """Best converged shot over a grid of initial headings.

    Sign changes of the signed miss between neighbouring grid headings are
    refined by bisection; refined shots that reach the target within the
    tolerance are candidates and the cheapest one wins (ties go to the
    smaller heading).  If nothing converges the closest shot is returned
    with ``converged=False``.
    """
    config = config or ShootConfig()
    psis = np.linspace(0.0, TWO_PI, config.n_headings, endpoint=False)
    found, miss, cost, _ = sweep(s, psis, config)
    roots = []
    n = len(psis)
    for i in range(n):
        j = (i + 1) % n
        if not (found[i] and found[j]):
            continue
        if miss[i] == 0.0:
            roots.append(psis[i])
            continue
        if (miss[i] < 0.0) != (miss[j] < 0.0):
            hi = psis[j] if j else TWO_PI
            r = _bisect(s, psis[i], hi, miss[i], config)
            if math.isfinite(r):
                roots.append(math.fmod(r, TWO_PI))
    candidates = []
    best = None
    for r in roots:
        shot = integrate(s, r, config)
        candidates.append((shot.psi0, shot.miss, shot.cost))
        if not shot.converged:
            continue
        if best is None or shot.cost < best.cost or (shot.cost == best.cost and shot.psi0 < best.psi0):
            best = shot
    if best is None:
        # honest non-convergence: report the shot that came closest
        dist = np.where(found, np.abs(miss), np.inf)
        k = int(np.argmin(dist)) if np.isfinite(dist).any() else 0
        best = integrate(s, psis[k], config)
        best.converged = False
    best.candidates = candidates
    return best


def cost_gap(c_pinn: float, c_baseline: float | None) -> float | None:
    """Relative excess (C_PINN - C_baseline) / C_baseline; None if undefined."""
    if c_baseline is None or not math.isfinite(c_baseline):
        return None
    if not c_baseline > 0.0:
        raise ValueError("baseline cost must be positive")
    return (c_pinn - c_baseline) / c_baseline
