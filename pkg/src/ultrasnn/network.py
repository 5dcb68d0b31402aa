"""Feedforward spiking network unrolled over T timesteps.

Per layer and timestep: I = s_prev @ W + b, one neuron step, spikes feed
the next layer.  The readout is affine on the last hidden layer's spikes
and logits are the mean over timesteps (rate decoding).  The training
loss is softmax cross-entropy on the logits plus an optional sparsity
penalty lambda * mean hidden spike rate; energy is accounted as the
relative synaptic-operation count T * mean spike rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import neurons
from .autodiff import Tensor
from .errors import ConfigError, ContractError, InputError, ShapeError
from .rng import STREAM_INIT, STREAM_MICRO, philox

MODES = ("train", "eval-soft", "eval-hard")


@dataclass(frozen=True)
class NetworkSpec:
    input_width: int
    classes: int
    timesteps: int
    kind: str = "ultralif"
    hidden: tuple = (64,)
    lambda_sparsity: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", neurons.normalize_kind(self.kind))
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.timesteps < 1:
            raise ConfigError("timesteps must be >= 1")
        if self.input_width < 1 or any(w < 1 for w in self.hidden):
            raise ConfigError("widths must be >= 1")
        if self.classes < 1:
            raise ConfigError("classes must be >= 1")
        if self.lambda_sparsity < 0:
            raise ConfigError("lambda_sparsity must be >= 0")


@dataclass
class ForwardRecord:
    logits: Tensor  # [batch, classes]
    sbar: Tensor  # scalar mean hidden spike rate
    spikes: Optional[list] = None  # [T][layers] arrays when retained

    @property
    def spike_rate(self) -> float:
        return float(self.sbar.data)


class Network:
    """Parameter container plus the unrolled forward pass."""

    def __init__(self, spec: NetworkSpec, cfg: neurons.NeuronConfig, params, eps_learnable=True):
        self.spec = spec
        self.cfg = cfg
        self.params = params
        self.eps_learnable = eps_learnable

    @classmethod
    def build(cls, spec: NetworkSpec, cfg: neurons.NeuronConfig = None, seed: int = 42,
              eps_learnable: bool = True, eps_init=None) -> "Network":
        """Deterministic init: weights and biases uniform on
        +-1/sqrt(fan_in) drawn in a fixed order from the init stream."""
        cfg = cfg or neurons.NeuronConfig(kind=spec.kind)
        if cfg.kind != spec.kind:
            raise ConfigError(f"config kind {cfg.kind} != spec kind {spec.kind}")
        rng = philox(seed, STREAM_INIT)
        params = {}
        fan_in = spec.input_width
        for l, width in enumerate(spec.hidden):
            bound = 1.0 / math.sqrt(fan_in)
            params[f"W{l}"] = Tensor(rng.uniform(-bound, bound, size=(fan_in, width)),
                                     requires_grad=True)
            params[f"b{l}"] = Tensor(rng.uniform(-bound, bound, size=width),
                                     requires_grad=True)
            fan_in = width
        bound = 1.0 / math.sqrt(fan_in)
        params["W_out"] = Tensor(rng.uniform(-bound, bound, size=(fan_in, spec.classes)),
                                 requires_grad=True)
        params["b_out"] = Tensor(rng.uniform(-bound, bound, size=spec.classes),
                                 requires_grad=True)
        for l in range(len(spec.hidden)):
            cell = neurons.make_params(cfg, eps_learnable=eps_learnable, eps_init=eps_init)
            for name, t in cell.items():
                params[f"{name}{l}"] = t
        return cls(spec, cfg, params, eps_learnable)

    def layer_cell_params(self, l: int) -> dict:
        out = {}
        for name in ("log_eps", "tau_param", "theta_param", "k"):
            t = self.params.get(f"{name}{l}")
            if t is not None:
                out[name] = t
        return out

    def trainable(self) -> dict:
        return {k: v for k, v in self.params.items() if v.requires_grad}

    def eps_values(self) -> list:
        """Current temperature per hidden layer (soft kinds only)."""
        out = []
        for l in range(len(self.spec.hidden)):
            t = self.params.get(f"log_eps{l}")
            if t is not None:
                out.append(float(np.exp(t.data)))
        return out

    def forward(self, encoded: np.ndarray, mode: str = "eval-soft",
                keep_spikes: bool = False) -> ForwardRecord:
        """Run the unrolled network on [T, batch, input_width] drive."""
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if mode == "eval-hard" and self.spec.kind not in neurons.ULTRA_KINDS:
            raise ContractError("eval-hard applies to the soft (ultra) kinds only")
        encoded = np.asarray(encoded, dtype=np.float64)
        if encoded.ndim != 3 or encoded.shape[2] != self.spec.input_width:
            raise ShapeError(
                f"encoded input must be [T, batch, {self.spec.input_width}], got {encoded.shape}"
            )
        if encoded.shape[0] != self.spec.timesteps:
            raise ShapeError(
                f"encoded T={encoded.shape[0]} != spec timesteps {self.spec.timesteps}"
            )
        T, batch, _ = encoded.shape
        spec, cfg = self.spec, self.cfg
        states = [
            neurons.fresh_state(cfg, batch, w, self.layer_cell_params(l))
            for l, w in enumerate(spec.hidden)
        ]
        hidden_units = sum(spec.hidden)
        spike_total = None
        logits_total = None
        kept = [] if keep_spikes else None
        for t in range(T):
            x = Tensor(encoded[t])
            step_spikes = []
            for l in range(len(spec.hidden)):
                drive = ad.add(ad.matmul(x, self.params[f"W{l}"]), self.params[f"b{l}"])
                if mode == "eval-hard":
                    out = neurons.hard_inference_step(states[l], drive, cfg)
                else:
                    out = neurons.step(states[l], drive, cfg)
                states[l] = out.state
                x = out.spikes
                layer_sum = ad.tsum(out.spikes)
                spike_total = layer_sum if spike_total is None else ad.add(spike_total, layer_sum)
                if keep_spikes:
                    step_spikes.append(out.spikes.data.copy())
            logit_t = ad.add(ad.matmul(x, self.params["W_out"]), self.params["b_out"])
            logits_total = logit_t if logits_total is None else ad.add(logits_total, logit_t)
            if keep_spikes:
                kept.append(step_spikes)
        logits = ad.scale(logits_total, 1.0 / T)
        sbar = ad.scale(spike_total, 1.0 / (T * batch * hidden_units))
        return ForwardRecord(logits=logits, sbar=sbar, spikes=kept)


def loss(record: ForwardRecord, labels, lam: float = 0.0) -> Tensor:
    """Softmax cross-entropy on the rate-decoded logits + lam * sbar."""
    labels = np.asarray(labels)
    logits = record.logits
    batch, classes = logits.data.shape
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} != ({batch},)")
    if labels.min() < 0 or labels.max() >= classes:
        raise InputError(f"labels must lie in [0, {classes})")
    onehot = np.zeros((batch, classes))
    onehot[np.arange(batch), labels] = 1.0
    ce = ad.mean(
        ad.sub(ad.lse(logits, 1.0, axis=1), ad.tsum(ad.mul(logits, onehot), axis=1))
    )
    if lam == 0.0:
        return ce
    return ad.add(ce, ad.scale(record.sbar, lam))


def accuracy(logits, labels) -> float:
    logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def energy(spike_rate, timesteps: int) -> float:
    """Relative synaptic-operation count: T * mean spike rate.

    Accepts the recorded rate or a ForwardRecord; exact float
    arithmetic, no rounding."""
    if isinstance(spike_rate, ForwardRecord):
        spike_rate = spike_rate.spike_rate
    return timesteps * spike_rate


# ---------------------------------------------------------------------------
# checkpoints: npz container, little-endian float64 arrays + JSON manifest


def save_checkpoint(path, net: Network, manifest_extra: dict = None):
    """Write the network to a single npz container.

    Layout: one little-endian float64 array per named parameter plus a
    ``__manifest__`` JSON string (model kind, spec, neuron config,
    parameter names, and caller extras such as seed/epoch).  The loader
    checks the dtype, so a save/load round trip is bit-exact.
    """
    manifest = {
        "format": "ultrasnn-checkpoint-v1",
        "kind": net.spec.kind,
        "spec": {
            "input_width": net.spec.input_width,
            "classes": net.spec.classes,
            "timesteps": net.spec.timesteps,
            "kind": net.spec.kind,
            "hidden": list(net.spec.hidden),
            "lambda_sparsity": net.spec.lambda_sparsity,
        },
        "neuron_config": {
            "kind": net.cfg.kind,
            "theta": net.cfg.theta,
            "tau0": net.cfg.tau0,
            "v_reset": net.cfg.v_reset,
            "eps0": net.cfg.eps0,
            "eps_clamp": list(net.cfg.eps_clamp),
            "beta_surrogate": net.cfg.beta_surrogate,
            "beta_adapt": net.cfg.beta_adapt,
            "tau_adapt": net.cfg.tau_adapt,
            "dspike_k0": net.cfg.dspike_k0,
        },
        "eps_learnable": net.eps_learnable,
        "parameters": sorted(net.params.keys()),
    }
    manifest.update(manifest_extra or {})
    arrays = {
        name: np.asarray(t.data, dtype="<f8", order="C") for name, t in net.params.items()
    }
    with open(path, "wb") as fh:
        np.savez(fh, __manifest__=json.dumps(manifest, sort_keys=True), **arrays)


def load_checkpoint(path):
    """Rebuild (Network, manifest); parameter round trip is bit-exact."""
    import zipfile

    try:
        with np.load(path, allow_pickle=False) as z:
            manifest = json.loads(str(z["__manifest__"]))
            arrays = {k: z[k] for k in z.files if k != "__manifest__"}
    except (ValueError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: not a valid checkpoint ({exc})") from exc
    sp = manifest["spec"]
    spec = NetworkSpec(
        input_width=sp["input_width"], classes=sp["classes"], timesteps=sp["timesteps"],
        kind=sp["kind"], hidden=tuple(sp["hidden"]),
        lambda_sparsity=sp["lambda_sparsity"],
    )
    nc = manifest["neuron_config"]
    cfg = neurons.NeuronConfig(
        kind=nc["kind"], theta=nc["theta"], tau0=nc["tau0"], v_reset=nc["v_reset"],
        eps0=nc["eps0"], eps_clamp=tuple(nc["eps_clamp"]),
        beta_surrogate=nc["beta_surrogate"], beta_adapt=nc["beta_adapt"],
        tau_adapt=nc["tau_adapt"], dspike_k0=nc["dspike_k0"],
    )
    eps_learnable = manifest.get("eps_learnable", True)
    params = {}
    for name in manifest["parameters"]:
        arr = arrays[name]
        if arr.dtype != np.dtype("<f8"):
            raise InputError(f"checkpoint array {name} is not little-endian float64")
        grad = not (name.startswith("log_eps") and not eps_learnable)
        params[name] = Tensor(arr, requires_grad=grad)
    return Network(spec, cfg, params, eps_learnable), manifest


# ---------------------------------------------------------------------------
# gradient verification


MICRO_SPEC = dict(input_width=6, hidden=(5,), classes=3, timesteps=3)
_MICRO_BATCH = 2


def _micro_setup(kind: str, seed: int = 0):
    spec = NetworkSpec(kind=kind, **MICRO_SPEC)
    net = Network.build(spec, seed=seed)
    rng = philox(seed, STREAM_MICRO)
    drive = rng.uniform(-1.0, 1.0, size=(spec.timesteps, _MICRO_BATCH, spec.input_width))
    labels = rng.integers(0, spec.classes, size=_MICRO_BATCH)
    return net, drive, labels


def _loss_value(net: Network, drive, labels, lam) -> float:
    rec = net.forward(drive, mode="eval-soft")
    return loss(rec, labels, lam).item()


def full_gradcheck(kind: str, fd_step: float = 1e-5, seed: int = 0, lam: float = 0.05):
    """Max relative error between tape gradients and central finite
    differences of the full-network loss on the fixed micro-net.

    Relative error is ||ad - fd||_inf / max(||fd||_inf, 1e-12) per
    parameter; returns (max_err, {param: err}).
    """
    net, drive, labels = _micro_setup(kind, seed)
    with ad.Tape() as tape:
        rec = net.forward(drive, mode="train")
        tape.backward(loss(rec, labels, lam))
    errs = {}
    for name, p in sorted(net.trainable().items()):
        g_ad = tape.grad(p)
        if g_ad is None:
            g_ad = np.zeros_like(p.data)
        g_fd = np.zeros_like(p.data)
        flat = p.data.ravel()
        fd_flat = g_fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            hi = _loss_value(net, drive, labels, lam)
            flat[i] = orig - fd_step
            lo = _loss_value(net, drive, labels, lam)
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2 * fd_step)
        denom = max(float(np.max(np.abs(g_fd))), 1e-12)
        errs[name] = float(np.max(np.abs(g_ad - g_fd))) / denom
    return max(errs.values()), errs


def surrogate_mismatch_check(kind: str = "lif", fd_step: float = 1e-5, seed: int = 0):
    """Demonstrate the surrogate forward/backward mismatch on a baseline.

    Picks a micro-net instance whose membranes stay clear of every
    effective threshold by more than a perturbation of fd_step can move
    them, so the hard forward is locally constant in the first-layer
    weights: every finite difference there is exactly 0 while the
    surrogate backward reports nonzero gradients.

    Returns dict with max |surrogate| and max |fd| over first-layer
    weights and the margin of the chosen instance.
    """
    kind = neurons.normalize_kind(kind)
    if kind not in neurons.BASELINE_KINDS:
        raise ContractError("mismatch check applies to surrogate baselines")
    for trial in range(seed, seed + 50):
        net, drive, labels = _micro_setup(kind, trial)
        margin = _min_threshold_margin(net, drive)
        if margin > 1e-3:
            break
    else:
        raise ContractError("no margin-clear micro instance found")
    with ad.Tape() as tape:
        rec = net.forward(drive, mode="train")
        tape.backward(loss(rec, labels, 0.0))
    g_sur = tape.grad(net.params["W0"])
    p = net.params["W0"]
    flat = p.data.ravel()
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + fd_step
        hi = _loss_value(net, drive, labels, 0.0)
        flat[i] = orig - fd_step
        lo = _loss_value(net, drive, labels, 0.0)
        flat[i] = orig
        fd[i] = (hi - lo) / (2 * fd_step)
    return {
        "seed": trial,
        "margin": margin,
        "max_surrogate": float(np.max(np.abs(g_sur))),
        "max_fd": float(np.max(np.abs(fd))),
    }


def _min_threshold_margin(net: Network, drive) -> float:
    """Smallest |pre-spike membrane - effective threshold| over the run."""
    cfg, spec = net.cfg, net.spec
    batch = drive.shape[1]
    states = [
        neurons.fresh_state(cfg, batch, w, net.layer_cell_params(l))
        for l, w in enumerate(spec.hidden)
    ]
    margin = np.inf
    x = None
    for t in range(spec.timesteps):
        x = Tensor(drive[t])
        for l in range(len(spec.hidden)):
            drive_l = ad.add(ad.matmul(x, net.params[f"W{l}"]), net.params[f"b{l}"])
            st = states[l]
            if cfg.kind in neurons._TAU_LEARNED:
                tau = float(1 / (1 + np.exp(-st.tau_param.data)))
            else:
                tau = cfg.tau0
            v_pre = st.v.data * tau + drive_l.data
            if cfg.kind == "adalif":
                theta_eff = cfg.theta + cfg.beta_adapt * st.b_adapt.data
            elif cfg.kind == "fullplif":
                theta_eff = float(1 / (1 + np.exp(-st.theta_param.data)))
            else:
                theta_eff = cfg.theta
            margin = min(margin, float(np.min(np.abs(v_pre - theta_eff))))
            out = neurons.step(st, drive_l, cfg)
            states[l] = out.state
            x = out.spikes
    return margin
