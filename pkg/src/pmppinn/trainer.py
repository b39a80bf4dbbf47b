"""Residual losses and the training loop for the PINN solver."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import torch

from . import pmp
from .networks import DTYPE, PinnModel, costate_spec, state_spec
from .pmp import Scenario

log = logging.getLogger(__name__)

N_LOSSES = 10
# Original hand-tuned weights. Once the annealing multipliers saturate at
# their upper bound these leave L7 (static) and L3/L4 (time-varying) starved.
ORIGINAL_STATIC_WEIGHTS = (100.0, 1.0, 1.0, 1.0, 50.0, 50.0, 1.0, 50.0, 50.0, 1.0)
ORIGINAL_TIME_VARYING_WEIGHTS = (100.0, 0.0, 2.0, 2.0, 200.0, 200.0, 75.0, 50.0, 50.0, 1.0)
# Defaults: same tables with the kinematic and stationarity weights (L3, L4, L7) floored at 50.
KINEMATIC_FLOOR = 50.0
STATIC_WEIGHTS = tuple(max(w, KINEMATIC_FLOOR) if k in (2, 3, 6) else w for k, w in enumerate(ORIGINAL_STATIC_WEIGHTS))
TIME_VARYING_WEIGHTS = tuple(
    max(w, KINEMATIC_FLOOR) if k in (2, 3, 6) else w for k, w in enumerate(ORIGINAL_TIME_VARYING_WEIGHTS)
)
LOSS_NAMES = tuple(f"L{k}" for k in range(1, N_LOSSES + 1))


class TrainingError(RuntimeError):
    """Base for aborted training runs; carries the log written so far."""

    def __init__(self, msg: str, log_rows=None):
        super().__init__(msg)
        self.log_rows = log_rows or []


class NonFiniteLoss(TrainingError):
    pass


class Divergence(TrainingError):
    pass


@dataclass(frozen=True)
class LossWeights:
    w: tuple[float, ...] = STATIC_WEIGHTS

    def __post_init__(self) -> None:
        object.__setattr__(self, "w", tuple(float(v) for v in self.w))
        if len(self.w) != N_LOSSES:
            raise ValueError(f"expected {N_LOSSES} weights, got {len(self.w)}")
        if any(v < 0.0 or not math.isfinite(v) for v in self.w):
            raise ValueError("loss weights must be finite and non-negative")

    @classmethod
    def static(cls) -> LossWeights:
        return cls(STATIC_WEIGHTS)

    @classmethod
    def time_varying(cls) -> LossWeights:
        return cls(TIME_VARYING_WEIGHTS)

    @classmethod
    def original(cls, s: Scenario) -> LossWeights:
        return cls(ORIGINAL_STATIC_WEIGHTS if s.static else ORIGINAL_TIME_VARYING_WEIGHTS)

    @classmethod
    def for_scenario(cls, s: Scenario) -> LossWeights:
        return cls.static() if s.static else cls.time_varying()

    def __getitem__(self, k: int) -> float:
        """1-based access, matching the loss numbering."""
        return self.w[k - 1]


@dataclass(frozen=True)
class TrainConfig:
    n_points: int = 512
    max_epochs: int = 10000
    lr: float = 1e-3
    decay_epoch: int = 7500
    decay_factor: float | None = None  # None: 2 for static, 10 for time-varying
    anneal: bool = True
    anneal_alpha: float = 0.9
    anneal_every: int = 50
    anneal_cost: bool = False  # whether L10 gets an adaptive multiplier
    anneal_bounds: tuple[float, float] = (1.0, 100.0)
    stop_threshold: float = 1e-3
    divergence_limit: float = 1e6
    width: int = 128
    state_depth: int = 3
    costate_depth: int = 5
    n_initial: int = 32  # initial states per batch in conditioned mode
    log_every: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_points < 2:
            raise ValueError("need at least two collocation points")
        if not self.lr > 0.0:
            raise ValueError("learning rate must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")

    @classmethod
    def full(cls, **kw) -> TrainConfig:
        return cls(**kw)

    @classmethod
    def desk(cls, **kw) -> TrainConfig:
        kw = {"width": 64, "n_points": 128, "max_epochs": 3000, "decay_epoch": 2250, **kw}
        return cls(**kw)

    @classmethod
    def profile(cls, name: str, **kw) -> TrainConfig:
        if name not in ("full", "desk"):
            raise ValueError(f"unknown profile {name!r}")
        return getattr(cls, name)(**kw)

    def decay_for(self, s: Scenario) -> float:
        if self.decay_factor is not None:
            return self.decay_factor
        return 2.0 if s.static else 10.0

    def build_model(self) -> PinnModel:
        return PinnModel(
            seed=self.seed,
            state_layers=state_spec(self.width, self.state_depth),
            costate_layers=costate_spec(self.width, self.costate_depth),
        )


# ---------------------------------------------------------------------------
# collocation
# ---------------------------------------------------------------------------


class Batch(NamedTuple):
    x0: torch.Tensor  # (M, 2)
    tau: torch.Tensor  # (N,)

    @property
    def shape(self) -> tuple[int, int]:
        return self.x0.shape[0], self.tau.shape[0]

    @property
    def dtau(self) -> float:
        return 1.0 / (self.tau.shape[0] - 1)


def tau_grid(n: int) -> torch.Tensor:
    return torch.linspace(0.0, 1.0, n, dtype=DTYPE)


def sample_initial_states(
    rng: np.random.Generator,
    m: int,
    workspace: tuple[float, float],
    avoid: Sequence[float] | None = None,
    min_separation: float = 5.0,
) -> np.ndarray:
    """Uniform draws over the workspace, rejecting points near ``avoid``."""
    lo, hi = workspace
    out = []
    while len(out) < m:
        p = rng.uniform(lo, hi, size=2)
        if avoid is not None and math.dist(p, avoid) < min_separation:
            continue
        out.append(p)
    return np.array(out).reshape(m, 2)


def collocate(config: TrainConfig, scenario: Scenario, mode: str = "single", seed: int | None = None) -> Batch:
    """Single mode: the scenario's x0 with a uniform tau grid.
    Conditioned mode: ``config.n_initial`` x0 drawn over the workspace,
    each paired with the same tau grid."""
    tau = tau_grid(config.n_points)
    if mode == "single":
        x0 = torch.tensor([scenario.x0], dtype=DTYPE)
    elif mode == "conditioned":
        rng = np.random.default_rng(config.seed if seed is None else seed)
        pts = sample_initial_states(rng, config.n_initial, scenario.workspace, scenario.xf)
        x0 = torch.tensor(pts, dtype=DTYPE)
    else:
        raise ValueError(f"unknown collocation mode {mode!r}")
    return Batch(x0, tau)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


class Evaluation(NamedTuple):
    """Network outputs and residual ingredients on an (M, N) batch."""

    tau: torch.Tensor
    x: torch.Tensor  # (M, N, 2)
    psi: torch.Tensor
    tf: torch.Tensor  # per point
    tf_mean: torch.Tensor  # (M,)
    p: torch.Tensor  # (M, N, 2)
    dx_dt: torch.Tensor  # (1/tf) dx/dtau
    dp_dt: torch.Tensor
    dH_dt: torch.Tensor
    c: torch.Tensor
    c_x: torch.Tensor  # (M, N, 2)
    c_t: torch.Tensor
    H: torch.Tensor
    H_d: torch.Tensor
    dH_dpsi: torch.Tensor


def evaluate(model: PinnModel, scenario: Scenario, batch: Batch) -> Evaluation:
    m, n = batch.shape
    x0 = batch.x0[:, None, :].expand(m, n, 2)
    tau = batch.tau[None, :].expand(m, n)
    st = model.forward_state(x0, tau, tangent=True)
    co = model.forward_costate(x0, tau, tangent=True)
    v = scenario.speed
    field_ = scenario.field

    t = tau * st.tf
    dt_dtau = st.tf + tau * st.dtf
    c = field_.value(st.x, t)
    g1, g2 = field_.grad_x(st.x, t)
    c_t = field_.dc_dt(st.x, t)
    cos_psi, sin_psi = torch.cos(st.psi), torch.sin(st.psi)
    p1, p2 = co.p[..., 0], co.p[..., 1]
    dp1, dp2 = co.dp[..., 0], co.dp[..., 1]

    H = scenario.bolza + c + v * (p1 * cos_psi + p2 * sin_psi)
    dH_dtau = (
        v * (dp1 * cos_psi + dp2 * sin_psi + (p2 * cos_psi - p1 * sin_psi) * st.dpsi)
        + g1 * st.dx[..., 0]
        + g2 * st.dx[..., 1]
        + c_t * dt_dtau
    )
    tf_mean = st.tf.mean(dim=1)
    if scenario.static:
        H_d = torch.zeros_like(H)
    else:
        H_d = pmp.backward_trapezoid(c_t, tf_mean, batch.dtau)
    inv_tf = 1.0 / st.tf[..., None]
    return Evaluation(
        tau=batch.tau,
        x=st.x,
        psi=st.psi,
        tf=st.tf,
        tf_mean=tf_mean,
        p=co.p,
        dx_dt=st.dx * inv_tf,
        dp_dt=co.dp * inv_tf,
        dH_dt=dH_dtau / st.tf,
        c=c,
        c_x=torch.stack([g1, g2], dim=-1),
        c_t=c_t,
        H=H,
        H_d=H_d,
        dH_dpsi=v * (p2 * cos_psi - p1 * sin_psi),
    )


class LossTerms(NamedTuple):
    losses: torch.Tensor  # (10,) unweighted
    reg: torch.Tensor
    ev: Evaluation


def compute_losses(model: PinnModel, scenario: Scenario, batch: Batch) -> LossTerms:
    """The ten unweighted residual losses as differentiable tensors.

    L1 Hamiltonian vs desired profile, L2 Hamiltonian rate, L3/L4 kinematics,
    L5/L6 co-state dynamics, L7 heading stationarity, L8/L9 boundary
    positions, L10 path cost (right Riemann sum, averaged over initial states).
    """
    ev = evaluate(model, scenario, batch)
    v = scenario.speed
    cos_psi, sin_psi = torch.cos(ev.psi), torch.sin(ev.psi)
    xf = torch.tensor(scenario.xf, dtype=DTYPE)
    l1 = ((ev.H_d - ev.H) ** 2).mean()
    l2 = ((ev.c_t - ev.dH_dt) ** 2).mean()
    l3 = ((ev.dx_dt[..., 0] - v * cos_psi) ** 2).mean()
    l4 = ((ev.dx_dt[..., 1] - v * sin_psi) ** 2).mean()
    l5 = ((ev.dp_dt[..., 0] + ev.c_x[..., 0]) ** 2).mean()
    l6 = ((ev.dp_dt[..., 1] + ev.c_x[..., 1]) ** 2).mean()
    l7 = (ev.dH_dpsi**2).mean()
    l8 = ((ev.x[:, 0, :] - batch.x0) ** 2).sum(-1).mean()
    l9 = ((ev.x[:, -1, :] - xf) ** 2).sum(-1).mean()
    running = ev.c[:, 1:] + scenario.bolza
    l10 = (ev.tf[:, 1:] * running).sum(-1).mean() * batch.dtau
    losses = torch.stack([l1, l2, l3, l4, l5, l6, l7, l8, l9, l10])
    if not torch.isfinite(losses).all():
        k = int((~torch.isfinite(losses)).nonzero()[0]) + 1
        raise NonFiniteLoss(f"loss L{k} is not finite{_locate(ev)}")
    return LossTerms(losses, model.l2_penalty(), ev)


def _locate(ev: Evaluation) -> str:
    bad = ~torch.isfinite(ev.H) | ~torch.isfinite(ev.dH_dt) | ~torch.isfinite(ev.tf)
    if bad.any():
        i, j = (int(v) for v in bad.nonzero()[0])
        return f" (first bad collocation point: initial state {i}, tau={float(ev.tau[j]):.6g})"
    return ""


# ---------------------------------------------------------------------------
# annealing and Adam
# ---------------------------------------------------------------------------


@dataclass
class AnnealingState:
    alpha: float = 0.9
    bounds: tuple[float, float] = (0.0, math.inf)
    lambdas: np.ndarray = field(default_factory=lambda: np.ones(N_LOSSES))
    updates: int = 0


def anneal(state: AnnealingState, loss_grads: Sequence[np.ndarray | None], ref_grad: np.ndarray) -> AnnealingState:
    """Moving-average update of the loss multipliers.

    lambda_hat_k = max|grad L_ref| / mean|grad L_k|, then
    lambda_k <- alpha lambda_k + (1 - alpha) lambda_hat_k.
    Losses with a missing or all-zero gradient keep their multiplier.
    """
    peak = float(np.max(np.abs(ref_grad))) if ref_grad.size else 0.0
    new = state.lambdas.copy()
    for k, g in enumerate(loss_grads):
        if g is None:
            continue
        mean = float(np.mean(np.abs(g)))
        if not mean > 0.0 or not math.isfinite(mean):
            log.debug("annealing: L%d has zero gradient, multiplier kept", k + 1)
            continue
        target = min(max(peak / mean, state.bounds[0]), state.bounds[1])
        new[k] = state.alpha * state.lambdas[k] + (1.0 - state.alpha) * target
    return AnnealingState(state.alpha, state.bounds, new, state.updates + 1)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """In-place Adam update with bias correction."""
    for g in grads:
        if not torch.isfinite(g).all():
            raise NonFiniteLoss("non-finite parameter gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (v / c2).sqrt_().add_(state.eps)
            p.addcdiv_(m, denom, value=-lr / c1)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class LossReport:
    losses: tuple[float, ...]  # unweighted L1..L10
    reg: float
    epochs: int
    wall_time: float
    converged: bool = False
    multipliers: tuple[float, ...] = ()

    def as_dict(self) -> dict:
        d = {name: val for name, val in zip(LOSS_NAMES, self.losses)}
        d.update(
            L_reg=self.reg,
            epochs=self.epochs,
            wall_time=self.wall_time,
            converged=self.converged,
            multipliers=list(self.multipliers),
        )
        return d

    def __getitem__(self, k: int) -> float:
        return self.losses[k - 1]


@dataclass
class Trajectory:
    tau: np.ndarray
    t: np.ndarray
    x: np.ndarray  # (n, 2)
    psi: np.ndarray
    p: np.ndarray  # (n, 2)
    H: np.ndarray
    c: np.ndarray
    tf: float
    cost: float

    def rows(self) -> np.ndarray:
        return np.column_stack(
            [self.tau, self.t, self.x[:, 0], self.x[:, 1], self.psi, self.p[:, 0], self.p[:, 1], self.H, self.c]
        )


LOG_COLUMNS = ("epoch", "lr", *LOSS_NAMES, "L_reg", "total")


@dataclass
class TrainResult:
    model: PinnModel
    report: LossReport
    trajectory: Trajectory | None
    log_rows: list = field(default_factory=list)
    batch: Batch | None = None


def _flat(grads) -> np.ndarray:
    return torch.cat([g.reshape(-1) for g in grads]).detach().numpy()


def _per_loss_grads(losses, params, weights: LossWeights):
    grads = []
    for k in range(N_LOSSES):
        if weights.w[k] == 0.0 or not losses[k].requires_grad:
            grads.append(None)
            continue
        g = torch.autograd.grad(losses[k], params, retain_graph=True, allow_unused=True)
        g = [torch.zeros_like(p) if gi is None else gi for gi, p in zip(g, params)]
        grads.append(_flat(g))
    return grads


def total_loss(terms: LossTerms, weights: LossWeights, lambdas: np.ndarray) -> torch.Tensor:
    """L_ref + sum_k w_k lambda_k L_k + L_reg with L_ref = w8 L8 + w9 L9."""
    w = torch.tensor(weights.w, dtype=DTYPE)
    lam = torch.as_tensor(lambdas, dtype=DTYPE)
    ref = w[7] * terms.losses[7] + w[8] * terms.losses[8]
    return ref + (w * lam * terms.losses).sum() + terms.reg


def _fit(model: PinnModel, scenario: Scenario, batch: Batch, config: TrainConfig, weights: LossWeights) -> TrainResult:
    params = model.parameters()
    adam = AdamState.zeros_like(params)
    ann = AnnealingState(alpha=config.anneal_alpha, bounds=config.anneal_bounds)
    decay = config.decay_for(scenario)
    rows: list = []
    start = time.perf_counter()
    stop_ks = [k for k in range(9) if weights.w[k] > 0.0]
    converged = False
    epoch = 0
    for epoch in range(config.max_epochs):
        lr = config.lr / decay if epoch >= config.decay_epoch else config.lr
        terms = compute_losses(model, scenario, batch)
        vals = terms.losses.detach().numpy()
        if np.max(np.abs(vals)) > config.divergence_limit:
            raise Divergence(
                f"epoch {epoch}: loss L{int(np.argmax(np.abs(vals))) + 1} exceeded "
                f"{config.divergence_limit:g}",
                rows,
            )
        if all(vals[k] < config.stop_threshold for k in stop_ks):
            converged = True
            break
        if config.anneal and epoch % config.anneal_every == 0:
            per = _per_loss_grads(terms.losses, params, weights)
            zero = np.zeros(sum(p.numel() for p in params))
            ref = weights.w[7] * (per[7] if per[7] is not None else zero) + weights.w[8] * (
                per[8] if per[8] is not None else zero
            )
            if not config.anneal_cost:
                per[9] = None
            ann = anneal(ann, per, ref)
        total = total_loss(terms, weights, ann.lambdas)
        if epoch % config.log_every == 0:
            rows.append([epoch, lr, *vals.tolist(), float(terms.reg.detach()), float(total.detach())])
            log.debug("epoch %d total %.4g", epoch, float(total.detach()))
        grads = torch.autograd.grad(total, params)
        adam_step(params, grads, adam, lr)
    else:
        epoch = config.max_epochs

    final = compute_losses(model, scenario, batch)
    vals = final.losses.detach().numpy()
    rows.append([epoch, lr if config.max_epochs else config.lr, *vals.tolist(), float(final.reg.detach()),
                 float(total_loss(final, weights, ann.lambdas).detach())])
    report = LossReport(
        losses=tuple(float(v) for v in vals),
        reg=float(final.reg.detach()),
        epochs=epoch,
        wall_time=time.perf_counter() - start,
        converged=converged,
        multipliers=tuple(float(v) for v in ann.lambdas),
    )
    return TrainResult(model, report, None, rows, batch)


def trajectory(model: PinnModel, scenario: Scenario, n: int = 512, x0=None) -> Trajectory:
    """Sample a trained model along a uniform tau grid."""
    x0 = scenario.x0 if x0 is None else tuple(x0)
    s = scenario.with_endpoints(x0, scenario.xf) if x0 != scenario.x0 else scenario
    batch = Batch(torch.tensor([x0], dtype=DTYPE), tau_grid(n))
    with torch.no_grad():
        ev = evaluate(model, s, batch)
    tf = float(ev.tf_mean[0])
    x = ev.x[0].numpy().copy()
    tau = batch.tau.numpy().copy()
    return Trajectory(
        tau=tau,
        t=tau * tf,
        x=x,
        psi=ev.psi[0].numpy().copy(),
        p=ev.p[0].numpy().copy(),
        H=ev.H[0].numpy().copy(),
        c=ev.c[0].numpy().copy(),
        tf=tf,
        cost=pmp.path_cost(s, x, tf, tau),
    )


def train_single(
    scenario: Scenario,
    config: TrainConfig | None = None,
    weights: LossWeights | None = None,
    model: PinnModel | None = None,
) -> TrainResult:
    """Train one model for the scenario's fixed initial/final pair."""
    config = config or TrainConfig()
    weights = weights or LossWeights.for_scenario(scenario)
    torch.manual_seed(config.seed)
    model = model or config.build_model()
    batch = collocate(config, scenario, "single")
    result = _fit(model, scenario, batch, config, weights)
    result.trajectory = trajectory(model, scenario, config.n_points)
    return result


def train_conditioned(
    scenario: Scenario,
    config: TrainConfig | None = None,
    weights: LossWeights | None = None,
    model: PinnModel | None = None,
) -> TrainResult:
    """Train one model over many initial states with the final state fixed."""
    config = config or TrainConfig()
    weights = weights or LossWeights.for_scenario(scenario)
    torch.manual_seed(config.seed)
    model = model or config.build_model()
    batch = collocate(config, scenario, "conditioned")
    return _fit(model, scenario, batch, config, weights)


def evaluate_at(model: PinnModel, scenario: Scenario, x0, n_points: int = 512) -> tuple[LossReport, Trajectory]:
    """Loss report and trajectory of a (conditioned) model at one initial state."""
    s = scenario.with_endpoints(x0, scenario.xf)
    batch = Batch(torch.tensor([tuple(x0)], dtype=DTYPE), tau_grid(n_points))
    with torch.no_grad():
        terms = compute_losses(model, s, batch)
    report = LossReport(
        losses=tuple(float(v) for v in terms.losses),
        reg=float(terms.reg),
        epochs=0,
        wall_time=0.0,
    )
    return report, trajectory(model, s, n_points)
