"""Independent reference computations used by the tests.

Nothing here reuses the vectorised loss code: losses are rebuilt point by
point on the scalar tape, with every tau-derivative (including the total
derivative of H) taken by nested automatic differentiation.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import simpson

from pmppinn import autodiff as ad
from pmppinn.networks import PinnModel
from pmppinn.pmp import Scenario


def _val(v) -> float:
    return v.value if isinstance(v, ad.Var) else float(v)


def scalar_losses(model: PinnModel, s: Scenario, x0s, taus, tape: ad.Tape, nested) -> list:
    """The ten losses as tape values for initial states ``x0s`` and grid ``taus``."""
    v, lam = s.speed, s.bolza
    n = len(taus)
    dtau = 1.0 / (n - 1)
    sums = [0.0] * 10
    cost_total = 0.0
    for x0 in x0s:
        pts = []
        for tau_val in taus:
            tau = tape.var(tau_val)
            x1, x2, psi, tf = model.scalar_state(nested, x0, tau)
            p1, p2 = model.scalar_costate(nested, x0, tau)
            t = tau * tf
            c = s.field.value((x1, x2), t)
            H = lam + c + v * (p1 * ad.cos(psi) + p2 * ad.sin(psi))
            d = ad.derivatives
            dx1, = d(x1, [tau], create_graph=True)
            dx2, = d(x2, [tau], create_graph=True)
            dp1, = d(p1, [tau], create_graph=True)
            dp2, = d(p2, [tau], create_graph=True)
            dH, = d(H, [tau], create_graph=True)
            g1, g2 = s.field.grad_x((x1, x2), t)
            ct = s.field.dc_dt((x1, x2), t)
            pts.append(dict(x1=x1, x2=x2, psi=psi, tf=tf, p1=p1, p2=p2, c=c, H=H,
                            dx1=dx1, dx2=dx2, dp1=dp1, dp2=dp2, dH=dH, g1=g1, g2=g2, ct=ct))
        tf_mean = 0.0
        for q in pts:
            tf_mean = tf_mean + q["tf"]
        tf_mean = tf_mean / n
        for i, q in enumerate(pts):
            hd = 0.0
            if not s.static:
                for j in range(i, n - 1):
                    hd = hd + 0.5 * (pts[j + 1]["ct"] + pts[j]["ct"]) * dtau
                hd = -tf_mean * hd
            tf = q["tf"]
            res = [
                hd - q["H"],
                q["ct"] - q["dH"] / tf,
                q["dx1"] / tf - v * ad.cos(q["psi"]),
                q["dx2"] / tf - v * ad.sin(q["psi"]),
                q["dp1"] / tf + q["g1"],
                q["dp2"] / tf + q["g2"],
                v * (q["p2"] * ad.cos(q["psi"]) - q["p1"] * ad.sin(q["psi"])),
            ]
            for k, r in enumerate(res):
                sums[k] = sums[k] + r * r
        first, last = pts[0], pts[-1]
        sums[7] = sums[7] + (first["x1"] - x0[0]) ** 2 + (first["x2"] - x0[1]) ** 2
        sums[8] = sums[8] + (last["x1"] - s.xf[0]) ** 2 + (last["x2"] - s.xf[1]) ** 2
        for q in pts[1:]:
            cost_total = cost_total + q["tf"] * (q["c"] + lam) * dtau
    m = len(x0s)
    out = [sums[k] / (m * n) for k in range(7)]
    out += [sums[7] / m, sums[8] / m, cost_total / m]
    return out


def scalar_loss_values_and_grads(model: PinnModel, s: Scenario, x0s, taus):
    """(values, gradients) of the ten scalar-route losses; grads in parameter order."""
    with ad.Tape() as tape:
        flat, nested = model.scalar_parameters(tape)
        losses = scalar_losses(model, s, x0s, taus, tape, nested)
        vals = [_val(L) for L in losses]
        grads = [np.array(ad.gradient(L, flat)) if isinstance(L, ad.Var) else np.zeros(len(flat))
                 for L in losses]
    return vals, grads


def scalar_loss_values(model: PinnModel, s: Scenario, x0s, taus) -> list[float]:
    with ad.Tape() as tape:
        _, nested = model.scalar_parameters(tape)
        return [_val(L) for L in scalar_losses(model, s, x0s, taus, tape, nested)]


def central_difference(f, x: float, h: float = 1e-5) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def simpson_cost(s: Scenario, path, tf: float, n_fine: int = 20001) -> float:
    """Fine Simpson quadrature of tf * int_0^1 (lambda + c(x(tau), tau tf)) dtau."""
    tau = np.linspace(0.0, 1.0, n_fine)
    xs = np.array([path(u) for u in tau])
    c = np.asarray(s.field.value(xs, tau * tf), dtype=float)
    return float(tf * simpson(c + s.bolza, x=tau))


def stationary_hd(field, point, tf: float, tau) -> np.ndarray:
    """Closed-form desired Hamiltonian for a vehicle parked at ``point``.

    With x fixed, -tf int_tau^1 dc/dt(x, u tf) du = c(x, tau tf) - c(x, tf).
    """
    tau = np.asarray(tau, dtype=float)
    pts = np.broadcast_to(np.asarray(point, dtype=float), tau.shape + (2,))
    return np.asarray(field.value(pts, tau * tf) - field.value(pts, tf + 0 * tau), dtype=float)


def wrap(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def extremal(s: Scenario, x0, p0, t_end: float, n: int = 25):
    """Integrate x' = v (cos, sin) psi*, p' = -grad c with psi* = atan2(-p2, -p1).

    Returns samples (t, x1, x2, p1, p2) from a tight-tolerance integration.
    """
    from scipy.integrate import solve_ivp

    def rhs(t, y):
        psi = math.atan2(-y[3], -y[2])
        g1, g2 = s.field.grad_x((y[0], y[1]), t)
        return [s.speed * math.cos(psi), s.speed * math.sin(psi), -g1, -g2]

    ts = np.linspace(0.0, t_end, n)
    sol = solve_ivp(rhs, (0.0, t_end), [*x0, *p0], t_eval=ts, rtol=1e-12, atol=1e-12, method="DOP853")
    return np.column_stack([sol.t, sol.y.T])


def total_hamiltonian_rate(s: Scenario, t: float, x1: float, x2: float, p1: float, p2: float):
    """(dH/dt by the chain rule on the tape, dc/dt) at one extremal point.

    H(x, p, psi*(p), t) is recorded with psi* = atan2(-p2, -p1); its partials
    come from a reverse sweep and are contracted with the state and co-state
    rates prescribed by the kinematics and co-state equations.
    """
    with ad.Tape() as tape:
        X1, X2, P1, P2, T = (tape.var(v) for v in (x1, x2, p1, p2, t))
        psi = ad.atan2(-P2, -P1)
        H = s.bolza + s.field.value((X1, X2), T) + s.speed * (P1 * ad.cos(psi) + P2 * ad.sin(psi))
        hx1, hx2, hp1, hp2, ht = ad.gradient(H, [X1, X2, P1, P2, T])
    psi_v = math.atan2(-p2, -p1)
    g1, g2 = s.field.grad_x((x1, x2), t)
    rate = hx1 * s.speed * math.cos(psi_v) + hx2 * s.speed * math.sin(psi_v) + hp1 * (-g1) + hp2 * (-g2) + ht
    return rate, float(s.field.dc_dt((x1, x2), t))


def sweep_oracle(s: Scenario, n: int = 4096, config=None):
    """Least cost over a dense heading sweep.

    Each sign change of the signed miss between neighbouring sweep headings
    is refined with Brent's method, so every compared shot actually reaches
    the target (raw near-miss shots stop short and look cheaper).
    Returns (best cost, list of (psi0, miss, cost)).
    """
    from scipy.optimize import brentq

    from pmppinn import shooting

    config = config or shooting.ShootConfig()
    psis = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    found, miss, _, _ = shooting.sweep(s, psis, config)

    def f(u):
        ok, m, _, _ = shooting.sweep(s, np.array([u]), config)
        return m[0] if ok[0] else math.nan

    shots = []
    for i in range(n):
        j = (i + 1) % n
        if not (found[i] and found[j]) or (miss[i] < 0) == (miss[j] < 0):
            continue
        hi = psis[j] if j else 2 * math.pi
        try:
            root = brentq(f, psis[i], hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        except ValueError:
            continue
        shot = shooting.integrate(s, root, config)
        if shot.converged:
            shots.append((root, shot.miss, shot.cost))
    best = min((c for _, _, c in shots), default=math.inf)
    return best, shots


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    from scipy.spatial import cKDTree

    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(max(da.max(), db.max()))
