"""State and co-state networks.

Both networks map (x0 / scale, tau) to their outputs.  The state network
emits (x1, x2, psi, tf) and the co-state network (p1, p2).  Forward passes
optionally carry the derivative with respect to tau alongside every
activation (forward mode), so the trainer obtains d(output)/d(tau) in the
same pass; parameter gradients then come from torch's reverse mode.

A second, scalar evaluation path runs the same parameters on
:class:`pmppinn.autodiff.Var` values for cross-checking.
"""

from __future__ import annotations

import json
import math
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch

from . import autodiff

ADAPTIVE_SINE = "adaptive-sine"
SILU = "silu"
IDENTITY = "identity"
ACTIVATIONS = (ADAPTIVE_SINE, SILU, IDENTITY)

FORMAT_VERSION = 1
L2_WEIGHT = 1e-6

DTYPE = torch.float64


class NonFiniteOutput(ArithmeticError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: str

    def __post_init__(self) -> None:
        if self.width <= 0:
            raise ValueError("layer width must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def hidden(width: int, depth: int, activation: str) -> tuple[LayerSpec, ...]:
    return tuple(LayerSpec(width, activation) for _ in range(depth))


def state_spec(width: int = 128, depth: int = 3) -> tuple[LayerSpec, ...]:
    return hidden(width, depth, ADAPTIVE_SINE)


def costate_spec(width: int = 128, depth: int = 5) -> tuple[LayerSpec, ...]:
    return hidden(width, depth, SILU)


def _act(kind, z, dz, alpha=None, beta=None):
    """Activation value and its tau-derivative."""
    if kind == ADAPTIVE_SINE:
        bz = beta * z
        a = alpha * torch.sin(bz)
        da = None if dz is None else alpha * beta * torch.cos(bz) * dz
        return a, da
    if kind == SILU:
        s = torch.sigmoid(z)
        a = z * s
        da = None if dz is None else s * (1.0 + z * (1.0 - s)) * dz
        return a, da
    return z, dz


class Mlp:
    """Fully connected network with per-layer adaptive-sine parameters."""

    def __init__(self, n_in: int, layers: Sequence[LayerSpec], n_out: int, gen: torch.Generator):
        self.n_in = n_in
        self.n_out = n_out
        self.layers = tuple(layers)
        sizes = [n_in] + [l.width for l in self.layers] + [n_out]
        self.weights: list[torch.Tensor] = []
        self.biases: list[torch.Tensor] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w = (torch.rand(fan_in, fan_out, generator=gen, dtype=DTYPE) * 2.0 - 1.0) * bound
            self.weights.append(w.requires_grad_())
            self.biases.append(torch.zeros(fan_out, dtype=DTYPE, requires_grad=True))
        self.alphas: list[torch.Tensor | None] = []
        self.betas: list[torch.Tensor | None] = []
        for spec in self.layers:
            if spec.activation == ADAPTIVE_SINE:
                self.alphas.append(torch.ones((), dtype=DTYPE, requires_grad=True))
                self.betas.append(torch.ones((), dtype=DTYPE, requires_grad=True))
            else:
                self.alphas.append(None)
                self.betas.append(None)

    def parameters(self) -> list[torch.Tensor]:
        params = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params += [w, b]
            if i < len(self.layers) and self.alphas[i] is not None:
                params += [self.alphas[i], self.betas[i]]
        return params

    def forward(self, x: torch.Tensor, dx: torch.Tensor | None = None):
        """Return outputs and, if ``dx`` is given, their directional derivative."""
        a, da = x, dx
        for i, spec in enumerate(self.layers):
            z = a @ self.weights[i] + self.biases[i]
            dz = None if da is None else da @ self.weights[i]
            a, da = _act(spec.activation, z, dz, self.alphas[i], self.betas[i])
            if not torch.isfinite(a).all():
                raise NonFiniteOutput(f"non-finite activation in hidden layer {i + 1}")
        out = a @ self.weights[-1] + self.biases[-1]
        dout = None if da is None else da @ self.weights[-1]
        return out, dout

    def forward_scalar(self, params: list, inputs: list) -> list:
        """Evaluate on scalars (floats or Vars) using a flat parameter list
        ordered like :meth:`parameters` (each tensor given as nested lists)."""
        it = iter(params)
        a = list(inputs)
        n_layers = len(self.weights)
        for i in range(n_layers):
            w, b = next(it), next(it)
            z = []
            for j in range(len(b)):
                acc = b[j]
                for k in range(len(a)):
                    acc = acc + a[k] * w[k][j]
                z.append(acc)
            if i == n_layers - 1:
                return z
            kind = self.layers[i].activation
            if kind == ADAPTIVE_SINE:
                alpha, beta = next(it), next(it)
                a = [alpha * autodiff.sin(beta * v) for v in z]
            elif kind == SILU:
                a = [v * autodiff.sigmoid(v) for v in z]
            else:
                a = z
        return a


class StateOutput(NamedTuple):
    x: torch.Tensor  # (..., 2)
    psi: torch.Tensor
    tf: torch.Tensor
    dx: torch.Tensor | None = None  # d/dtau
    dpsi: torch.Tensor | None = None
    dtf: torch.Tensor | None = None


class CostateOutput(NamedTuple):
    p: torch.Tensor  # (..., 2)
    dp: torch.Tensor | None = None


def softplus(x):
    return torch.nn.functional.softplus(x)


class PinnModel:
    """State network + co-state network sharing one parameter list."""

    def __init__(
        self,
        seed: int = 0,
        state_layers: Sequence[LayerSpec] = state_spec(),
        costate_layers: Sequence[LayerSpec] = costate_spec(),
        scale: float = 15.0,
    ):
        self.seed = int(seed)
        self.scale = float(scale)
        gen = torch.Generator().manual_seed(self.seed)
        self.state = Mlp(3, state_layers, 4, gen)
        self.costate = Mlp(3, costate_layers, 2, gen)

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> list[torch.Tensor]:
        return self.state.parameters() + self.costate.parameters()

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def l2_penalty(self) -> torch.Tensor:
        """1e-6 times the squared co-state weights (biases excluded)."""
        return L2_WEIGHT * sum((w * w).sum() for w in self.costate.weights)

    # -- evaluation ---------------------------------------------------------

    def _inputs(self, x0, tau):
        x0 = torch.as_tensor(x0, dtype=DTYPE)
        tau = torch.as_tensor(tau, dtype=DTYPE)
        x0, tau = torch.broadcast_tensors(x0, tau.unsqueeze(-1))
        return torch.cat([x0 / self.scale, tau[..., :1]], dim=-1)

    def _tangent(self, inp):
        d = torch.zeros_like(inp)
        d[..., 2] = 1.0
        return d

    def forward_state(self, x0, tau, tangent: bool = False) -> StateOutput:
        """x-hat [m], psi-hat [rad] and tf-hat [s] at normalized time ``tau``."""
        inp = self._inputs(x0, tau)
        out, dout = self.state.forward(inp, self._tangent(inp) if tangent else None)
        x = self.scale * out[..., :2]
        psi = out[..., 2]
        tf = softplus(out[..., 3])
        if dout is None:
            return StateOutput(x, psi, tf)
        dtf = torch.sigmoid(out[..., 3]) * dout[..., 3]
        return StateOutput(x, psi, tf, self.scale * dout[..., :2], dout[..., 2], dtf)

    def forward_costate(self, x0, tau, tangent: bool = False) -> CostateOutput:
        inp = self._inputs(x0, tau)
        out, dout = self.costate.forward(inp, self._tangent(inp) if tangent else None)
        return CostateOutput(out, dout)

    # -- scalar path --------------------------------------------------------

    def scalar_parameters(self, tape: autodiff.Tape):
        """Leaf Vars for every parameter entry; returns (flat list, nested per tensor)."""
        flat, nested = [], []
        for p in self.parameters():
            arr = p.detach().numpy()
            if arr.ndim == 0:
                v = tape.var(float(arr))
                flat.append(v)
                nested.append(v)
            elif arr.ndim == 1:
                row = [tape.var(float(a)) for a in arr]
                flat += row
                nested.append(row)
            else:
                rows = [[tape.var(float(a)) for a in r] for r in arr]
                for r in rows:
                    flat += r
                nested.append(rows)
        return flat, nested

    def scalar_state(self, nested, x0, tau):
        """(x1, x2, psi, tf) on scalars; ``nested`` from :meth:`scalar_parameters`."""
        n_state = len(self.state.parameters())
        inp = [x0[0] / self.scale, x0[1] / self.scale, tau]
        o = self.state.forward_scalar(nested[:n_state], inp)
        # softplus(u) = log(1 + exp(u))
        tf = autodiff.log(1.0 + autodiff.exp(o[3]))
        return self.scale * o[0], self.scale * o[1], o[2], tf

    def scalar_costate(self, nested, x0, tau):
        n_state = len(self.state.parameters())
        inp = [x0[0] / self.scale, x0[1] / self.scale, tau]
        o = self.costate.forward_scalar(nested[n_state:], inp)
        return o[0], o[1]

    # -- persistence --------------------------------------------------------

    def config(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "scale": self.scale,
            "state_layers": [asdict(l) for l in self.state.layers],
            "costate_layers": [asdict(l) for l in self.costate.layers],
        }

    def save(self, path) -> None:
        """npz archive with fixed member timestamps so equal models give equal bytes."""
        arrays = {"header": np.array(json.dumps(self.config(), sort_keys=True))}
        arrays.update({f"p{i:03d}": p.detach().numpy() for i, p in enumerate(self.parameters())})
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                with zf.open(info, "w") as fh:
                    np.lib.format.write_array(fh, np.asarray(arr), allow_pickle=False)

    @classmethod
    def load(cls, path) -> PinnModel:
        with np.load(Path(path), allow_pickle=False) as data:
            cfg = json.loads(str(data["header"]))
            if cfg.get("format_version") != FORMAT_VERSION:
                raise ValueError(f"unsupported model format {cfg.get('format_version')!r}")
            model = cls(
                seed=cfg["seed"],
                state_layers=[LayerSpec(**l) for l in cfg["state_layers"]],
                costate_layers=[LayerSpec(**l) for l in cfg["costate_layers"]],
                scale=cfg["scale"],
            )
            params = model.parameters()
            with torch.no_grad():
                for i, p in enumerate(params):
                    p.copy_(torch.from_numpy(data[f"p{i:03d}"]))
        return model

    def state_dict(self) -> list[np.ndarray]:
        return [p.detach().numpy().copy() for p in self.parameters()]
