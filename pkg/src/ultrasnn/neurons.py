"""Spiking neuron cells.

Four soft max-plus variants trained with exact gradients:

- UltraLIF / UltraPLIF (temporal): pre-spike membrane is a 2-term
  temperature log-sum-exp of the decayed state and the input current,
  ``pre = lse(V + log(tau), I)``; PLIF learns tau = sigmoid(tau_param).
- UltraDLIF / UltraDPLIF (spatial): 3-term log-sum-exp over the circular
  unit neighborhood plus the input, ``pre_i = lse(V_{i-1}, V_i, V_{i+1})
  + I_i``; the DPLIF leak log(tau) is added to each spatial argument.

All four share the soft spike s = sigmoid((pre - theta)/eps) and the
convex reset V' = pre*(1-s) + v_reset*s, with eps = exp(log_eps)
learnable.  Six surrogate-gradient baselines (LIF, PLIF, AdaLIF,
FullPLIF, DSpike, DSpike+) use a hard Heaviside forward with a smooth
backward, and hard max-plus oracles provide the eps -> 0 reference
trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, InputError, ParameterError, ShapeError

ULTRA_KINDS = ("ultralif", "ultraplif", "ultradlif", "ultradplif")
BASELINE_KINDS = ("lif", "plif", "adalif", "fullplif", "dspike", "dspikeplus")
KINDS = ULTRA_KINDS + BASELINE_KINDS

_TAU_LEARNED = ("ultraplif", "ultradplif", "plif", "fullplif", "dspikeplus")


def normalize_kind(kind: str) -> str:
    k = kind.strip().lower().replace("-", "").replace("_", "")
    if k == "dspike+":
        k = "dspikeplus"
    if k not in KINDS:
        raise ContractError(f"unknown neuron kind {kind!r}; choose from {KINDS}")
    return k


def is_ultra(kind: str) -> bool:
    return normalize_kind(kind) in ULTRA_KINDS


def is_spatial(kind: str) -> bool:
    return normalize_kind(kind) in ("ultradlif", "ultradplif")


@dataclass(frozen=True)
class NeuronConfig:
    """Per-layer hyperparameters; defaults follow the common benchmark
    setting (theta 0.5, leak 0.9, reset 0, eps0 1.0 clamped to [0.1, 20],
    surrogate sharpness 10, adaptation 0.1/0.9, tanh sharpness init 4)."""

    kind: str = "ultralif"
    theta: float = 0.5
    tau0: float = 0.9
    v_reset: float = 0.0
    eps0: float = 1.0
    eps_clamp: tuple[float, float] = (0.1, 20.0)
    beta_surrogate: float = 10.0
    beta_adapt: float = 0.1
    tau_adapt: float = 0.9
    dspike_k0: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_kind(self.kind))
        if not self.theta > 0:
            raise ParameterError("theta must be positive")
        if not 0.0 < self.tau0 < 1.0:
            raise ParameterError("tau0 must lie in (0, 1)")
        lo, hi = self.eps_clamp
        if not (lo > 0 and lo < hi):
            raise ParameterError("eps_clamp must satisfy 0 < lo < hi")


@dataclass
class NeuronState:
    """Mutable per-layer state: membrane (and adaptation) tensors plus
    the layer's learnable scalars.  Single-owner; never shared across
    threads."""

    v: Tensor
    b_adapt: Optional[Tensor] = None
    log_eps: Optional[Tensor] = None
    tau_param: Optional[Tensor] = None
    theta_param: Optional[Tensor] = None
    k: Optional[Tensor] = None


@dataclass
class StepOutput:
    spikes: Tensor
    state: NeuronState


def make_params(cfg: NeuronConfig, eps_learnable: bool = True, eps_init=None):
    """Learnable scalar parameters for one layer of ``cfg.kind``.

    eps is stored as log_eps (eps = exp(log_eps)); a fixed-eps layer
    keeps the tensor but with requires_grad off.
    """
    params = {}
    if cfg.kind in ULTRA_KINDS:
        e0 = cfg.eps0 if eps_init is None else float(eps_init)
        if not e0 > 0:
            raise ParameterError("initial eps must be positive")
        params["log_eps"] = Tensor(math.log(e0), requires_grad=eps_learnable)
    if cfg.kind in _TAU_LEARNED:
        logit = math.log(cfg.tau0 / (1.0 - cfg.tau0))
        params["tau_param"] = Tensor(logit, requires_grad=True)
    if cfg.kind == "fullplif":
        # theta = sigmoid(theta_param); theta0 = 0.5 maps to 0
        th = min(max(cfg.theta, 1e-6), 1 - 1e-6)
        params["theta_param"] = Tensor(math.log(th / (1.0 - th)), requires_grad=True)
    if cfg.kind in ("dspike", "dspikeplus"):
        params["k"] = Tensor(cfg.dspike_k0, requires_grad=True)
    return params


def fresh_state(cfg: NeuronConfig, batch: int, width: int, params=None) -> NeuronState:
    """Zero-initialized membrane state bound to the layer's parameters."""
    params = params or {}
    return NeuronState(
        v=Tensor(np.zeros((batch, width))),
        b_adapt=Tensor(np.zeros((batch, width))) if cfg.kind == "adalif" else None,
        log_eps=params.get("log_eps"),
        tau_param=params.get("tau_param"),
        theta_param=params.get("theta_param"),
        k=params.get("k"),
    )


def _check_input(state: NeuronState, current: Tensor):
    if current.data.shape != state.v.data.shape:
        raise ShapeError(
            f"input shape {current.data.shape} != state shape {state.v.data.shape}"
        )
    if not np.isfinite(current.data).all():
        raise InputError("input current contains non-finite values")


def _soft_spike_reset(pre: Tensor, eps: Tensor, cfg: NeuronConfig):
    s = ad.sigmoid(ad.div(ad.sub(pre, cfg.theta), eps))
    v_next = ad.mul(pre, ad.sub(1.0, s))
    if cfg.v_reset != 0.0:
        v_next = ad.add(v_next, ad.scale(s, cfg.v_reset))
    return s, v_next


def _ultra_pre(state: NeuronState, current: Tensor, cfg: NeuronConfig, eps: Tensor):
    """Pre-spike membrane of the four soft variants."""
    if cfg.kind in ("ultralif", "ultraplif"):
        if cfg.kind == "ultraplif":
            log_tau = ad.log(ad.sigmoid(state.tau_param))
            decayed = ad.add(state.v, log_tau)
        else:
            decayed = ad.add(state.v, math.log(cfg.tau0))
        return ad.lse(ad.stack([decayed, current]), eps, axis=0)
    neighbors = [
        ad.roll(state.v, 1, axis=1),
        state.v,
        ad.roll(state.v, -1, axis=1),
    ]
    if cfg.kind == "ultradplif":
        log_tau = ad.log(ad.sigmoid(state.tau_param))
        neighbors = [ad.add(n, log_tau) for n in neighbors]
    return ad.add(ad.lse(ad.stack(neighbors), eps, axis=0), current)


def ultralif_step(state: NeuronState, current: Tensor, cfg: NeuronConfig) -> StepOutput:
    """One soft temporal step: lse-integrate, sigmoid spike, convex reset."""
    _check_input(state, current)
    eps = ad.exp(state.log_eps)
    pre = _ultra_pre(state, current, cfg, eps)
    s, v_next = _soft_spike_reset(pre, eps, cfg)
    return StepOutput(spikes=s, state=replace(state, v=v_next))


def ultradlif_step(state: NeuronState, current: Tensor, cfg: NeuronConfig) -> StepOutput:
    """One soft spatial step (circular 3-neighborhood lse, then input)."""
    return ultralif_step(state, current, cfg)


def _sigmoid_surrogate_spike(x: Tensor, beta: float) -> Tensor:
    """Hard step forward, sigmoid-derivative backward.

    The backward rule is deliberately NOT the derivative of the forward
    (which is zero a.e.); that mismatch is the baseline training trick.
    """
    xd = x.data
    out = (xd > 0).astype(np.float64)
    sg = 1.0 / (1.0 + np.exp(-np.clip(beta * xd, -500, 500)))

    def vjp(g):
        return (g * beta * sg * (1.0 - sg),)

    return ad.record_custom("spike_surrogate", out, (x,), vjp)


def _dspike_spike(v: Tensor, k: Tensor, theta: float) -> Tensor:
    """Hard step forward; backward from the normalized tanh spike form
    s(v,k) = (tanh(k*(v/(2*theta) - 1/2)) + tanh(k/2)) / (2*tanh(k/2)),
    with gradients in both v and the sharpness k."""
    vd, kd = v.data, float(k.data)
    out = (vd > theta).astype(np.float64)
    u = vd / (2.0 * theta) - 0.5
    A = np.tanh(kd * u)
    B = math.tanh(kd / 2.0)
    dA_dv = (1.0 - A * A) * kd / (2.0 * theta)
    dA_dk = (1.0 - A * A) * u
    dB_dk = 0.5 * (1.0 - B * B)

    def vjp(g):
        gv = g * dA_dv / (2.0 * B)
        gk = np.sum(g * (dA_dk * B - A * dB_dk) / (2.0 * B * B))
        return gv, np.asarray(gk).reshape(k.data.shape)

    return ad.record_custom("spike_dspike", out, (v, k), vjp)


def baseline_step(state: NeuronState, current: Tensor, cfg: NeuronConfig) -> StepOutput:
    """One surrogate-gradient baseline step.

    Dynamics: v' = tau*v + I; s = H(v' - theta_eff); v <- v'*(1-s).
    AdaLIF raises its effective threshold after spikes:
    theta_eff = theta0 + beta_adapt*b,  b <- tau_adapt*b + (1-tau_adapt)*s.
    """
    if cfg.kind not in BASELINE_KINDS:
        raise ContractError(f"{cfg.kind} is not a surrogate baseline")
    _check_input(state, current)

    if cfg.kind in _TAU_LEARNED:
        v_pre = ad.add(ad.mul(state.v, ad.sigmoid(state.tau_param)), current)
    else:
        v_pre = ad.add(ad.scale(state.v, cfg.tau0), current)

    b_next = state.b_adapt
    if cfg.kind in ("dspike", "dspikeplus"):
        s = _dspike_spike(v_pre, state.k, cfg.theta)
    else:
        if cfg.kind == "adalif":
            theta_eff = ad.add(cfg.theta, ad.scale(state.b_adapt, cfg.beta_adapt))
            x = ad.sub(v_pre, theta_eff)
        elif cfg.kind == "fullplif":
            x = ad.sub(v_pre, ad.sigmoid(state.theta_param))
        else:
            x = ad.sub(v_pre, cfg.theta)
        s = _sigmoid_surrogate_spike(x, cfg.beta_surrogate)
        if cfg.kind == "adalif":
            b_next = ad.add(
                ad.scale(state.b_adapt, cfg.tau_adapt),
                ad.scale(s, 1.0 - cfg.tau_adapt),
            )

    v_next = ad.mul(v_pre, ad.sub(1.0, s))
    return StepOutput(spikes=s, state=replace(state, v=v_next, b_adapt=b_next))


def step(state: NeuronState, current: Tensor, cfg: NeuronConfig) -> StepOutput:
    """Dispatch one training/eval step by neuron kind."""
    if cfg.kind in ULTRA_KINDS:
        return ultralif_step(state, current, cfg)
    return baseline_step(state, current, cfg)


def hard_inference_step(
    state: NeuronState, current: Tensor, cfg: NeuronConfig
) -> StepOutput:
    """Deployment-style step for the soft variants: identical membrane
    update, but hard spike H(pre - theta) and hard reset.  Inference
    only; refuses to run under an active tape."""
    if cfg.kind not in ULTRA_KINDS:
        raise ContractError("hard inference is defined for the soft variants only")
    if ad._active_tape() is not None:
        raise ContractError("hard inference must not run during training")
    _check_input(state, current)
    eps = ad.exp(state.log_eps)
    pre = _ultra_pre(state, current, cfg, eps)
    s_data = (pre.data > cfg.theta).astype(np.float64)
    v_data = pre.data * (1.0 - s_data) + cfg.v_reset * s_data
    return StepOutput(spikes=Tensor(s_data), state=replace(state, v=Tensor(v_data)))


# ---------------------------------------------------------------------------
# hard max-plus reference dynamics (eps -> 0 limits; plain numpy)


def maxplus_lif_oracle(v, current, cfg: NeuronConfig):
    """Hard temporal limit: pre = max(v + log(tau0), I), hard spike/reset.

    Returns (v_next, spike, margin) with margin = |pre - theta|, the
    quantity the threshold-margin assumption constrains.
    """
    v = np.asarray(v, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    pre = np.maximum(v + math.log(cfg.tau0), current)
    s = (pre > cfg.theta).astype(np.float64)
    v_next = pre * (1.0 - s) + cfg.v_reset * s
    return v_next, s, np.abs(pre - cfg.theta)


def maxplus_dlif_oracle(v, current, cfg: NeuronConfig):
    """Hard spatial limit: circular 3-neighborhood dilation plus input,
    hard spike/reset.  Returns (v_next, spikes, margins)."""
    v = np.asarray(v, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    pre = np.maximum(np.maximum(np.roll(v, 1, -1), v), np.roll(v, -1, -1)) + current
    s = (pre > cfg.theta).astype(np.float64)
    v_next = pre * (1.0 - s) + cfg.v_reset * s
    return v_next, s, np.abs(pre - cfg.theta)
