"""Optimization loop: Adam, cosine-annealed learning rate, deterministic
batching/encoding, per-epoch metrics, and the temperature ablation
driver.
"""

from __future__ import annotations


import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import encoding, neurons, network
from .errors import ConfigError
from .rng import STREAM_ENCODE, STREAM_EVAL_ENCODE, STREAM_SHUFFLE, philox

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int
    lr0: float = 1e-3
    batch: int = 128
    seed: int = 42
    schedule: str = "cosine"  # cosine | constant
    lambda_sparsity: float = 0.0
    eps_mode: str = "learned"  # "learned" or "fixed:<value>"
    encode: str = "rate"  # rate | analog
    gain: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.lr0 > 0:
            raise ConfigError("lr0 must be positive")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.encode not in ("rate", "analog"):
            raise ConfigError(f"unknown encode mode {self.encode!r}")
        if self.eps_mode != "learned":
            if not self.eps_mode.startswith("fixed:"):
                raise ConfigError("eps_mode is 'learned' or 'fixed:<value>'")
            float(self.eps_mode.split(":", 1)[1])

    @property
    def eps_learnable(self) -> bool:
        return self.eps_mode == "learned"

    @property
    def eps_init(self):
        if self.eps_learnable:
            return None
        return float(self.eps_mode.split(":", 1)[1])

    def to_text(self) -> str:
        """Key-value config serialization (one `key = value` per line)."""
        keys = ("epochs", "lr0", "batch", "seed", "schedule",
                "lambda_sparsity", "eps_mode", "encode", "gain")
        return "".join(f"{k} = {getattr(self, k)}\n" for k in keys)

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        kw = {}
        casts = {"epochs": int, "batch": int, "seed": int,
                 "lr0": float, "lambda_sparsity": float, "gain": float,
                 "schedule": str, "eps_mode": str, "encode": str}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in casts:
                raise ConfigError(f"unknown config key {key!r}")
            kw[key] = casts[key](value)
        if "epochs" not in kw:
            raise ConfigError("config must set epochs")
        return cls(**kw)


@dataclass
class RunMetrics:
    """Per-epoch rows; column order is the CSV contract."""

    eps_layers: int
    rows: list = field(default_factory=list)

    @property
    def columns(self):
        eps_cols = [f"eps_layer{i}" for i in range(self.eps_layers)]
        return ["epoch", "loss", "acc", "spike_soft", "spike_hard", "energy",
                *eps_cols, "lr"]

    def append(self, **row):
        self.rows.append(row)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in self.columns])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv_text())


@dataclass
class TrainResult:
    net: network.Network  # final parameters
    best_params: dict  # best-accuracy snapshot (plain arrays)
    best_epoch: int
    best_acc: float
    metrics: RunMetrics

    def best_network(self) -> network.Network:
        n = self.net
        params = {k: ad.Tensor(v.copy(), requires_grad=n.params[k].requires_grad)
                  for k, v in self.best_params.items()}
        return network.Network(n.spec, n.cfg, params, n.eps_learnable)


class AdamState:
    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """Standard Adam with betas (0.9, 0.999) and eps 1e-8, in place."""
    state.t += 1
    b1, b2 = ADAM_BETAS
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def project_eps(params: dict, clamp):
    """Clamp every log-temperature to [log lo, log hi] after a step."""
    lo, hi = math.log(clamp[0]), math.log(clamp[1])
    for name, p in params.items():
        if name.startswith("log_eps"):
            np.clip(p.data, lo, hi, out=p.data)


def cosine_lr(epoch: int, epochs: int, lr0: float) -> float:
    """Half-cosine decay from lr0 at epoch 0 toward 0."""
    if not 0 <= epoch < epochs:
        raise ConfigError("epoch out of range")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * epoch / epochs))


def _encode_batch(images, spec, tc: TrainConfig, ds, stream, c0, c1):
    if tc.encode == "analog":
        return encoding.analog_encode(images, spec.timesteps, ds.mean, ds.std)
    rng = philox(tc.seed, stream, c0, c1)
    return encoding.rate_encode(images, spec.timesteps, tc.gain, rng)


def evaluate(net: network.Network, ds, tc: TrainConfig) -> dict:
    """Test-set accuracy and spike rates (soft decode; hard rate/acc for
    the soft kinds via the deployment path)."""
    spec = net.spec
    n = len(ds)
    correct = 0
    soft_sum = 0.0
    hard_sum = 0.0
    hard_correct = 0
    is_ultra = spec.kind in neurons.ULTRA_KINDS
    for b, start in enumerate(range(0, n, tc.batch)):
        images = ds.images[start:start + tc.batch]
        labels = ds.labels[start:start + tc.batch]
        encoded = _encode_batch(images, spec, tc, ds, STREAM_EVAL_ENCODE, 0, b)
        rec = net.forward(encoded, mode="eval-soft")
        correct += int(np.sum(np.argmax(rec.logits.data, axis=1) == labels))
        soft_sum += rec.spike_rate * len(images)
        if is_ultra:
            hrec = net.forward(encoded, mode="eval-hard")
            hard_sum += hrec.spike_rate * len(images)
            hard_correct += int(np.sum(np.argmax(hrec.logits.data, axis=1) == labels))
        else:
            hard_sum += rec.spike_rate * len(images)
            hard_correct = correct
    return {
        "acc": correct / n,
        "acc_hard": hard_correct / n,
        "spike_soft": soft_sum / n,
        "spike_hard": hard_sum / n,
    }


def train(spec: network.NetworkSpec, train_ds, test_ds, tc: TrainConfig,
          cfg: neurons.NeuronConfig = None, epoch_callback=None) -> TrainResult:
    """Deterministic training run: (seed, config) fixes every byte of
    the metrics.  Tracks the best-accuracy epoch alongside the final
    parameters."""
    if train_ds.images.shape[1] != spec.input_width:
        raise ConfigError(
            f"dataset width {train_ds.images.shape[1]} != spec input {spec.input_width}"
        )
    cfg = cfg or neurons.NeuronConfig(kind=spec.kind)
    net = network.Network.build(
        spec, cfg, seed=tc.seed, eps_learnable=tc.eps_learnable, eps_init=tc.eps_init
    )
    trainable = net.trainable()
    adam = AdamState()
    metrics = RunMetrics(eps_layers=len(net.eps_values()))
    best_acc, best_epoch, best_params = -1.0, -1, None
    n = len(train_ds)
    for epoch in range(tc.epochs):
        lr = cosine_lr(epoch, tc.epochs, tc.lr0) if tc.schedule == "cosine" else tc.lr0
        order = philox(tc.seed, STREAM_SHUFFLE, epoch).permutation(n)
        loss_sum = 0.0
        for b, start in enumerate(range(0, n, tc.batch)):
            idx = order[start:start + tc.batch]
            images = train_ds.images[idx]
            labels = train_ds.labels[idx]
            encoded = _encode_batch(images, spec, tc, train_ds, STREAM_ENCODE, epoch, b)
            with ad.Tape() as tape:
                rec = net.forward(encoded, mode="train")
                batch_loss = network.loss(rec, labels, tc.lambda_sparsity)
                tape.backward(batch_loss)
            grads = {name: tape.grad(p) for name, p in trainable.items()}
            adam_step(trainable, grads, adam, lr)
            project_eps(trainable, cfg.eps_clamp)
            loss_sum += batch_loss.item() * len(idx)
        stats = evaluate(net, test_ds, tc)
        eps_vals = net.eps_values()
        row = {
            "epoch": epoch,
            "loss": loss_sum / n,
            "acc": stats["acc"],
            "spike_soft": stats["spike_soft"],
            "spike_hard": stats["spike_hard"],
            "energy": network.energy(stats["spike_soft"], spec.timesteps),
            "lr": lr,
        }
        for i, e in enumerate(eps_vals):
            row[f"eps_layer{i}"] = e
        metrics.append(**row)
        if stats["acc"] > best_acc:
            best_acc = stats["acc"]
            best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in net.params.items()}
        if epoch_callback is not None:
            epoch_callback(epoch, row, net)
    return TrainResult(net=net, best_params=best_params, best_epoch=best_epoch,
                       best_acc=best_acc, metrics=metrics)


def train_accuracy(net: network.Network, ds, tc: TrainConfig) -> float:
    return evaluate(net, ds, tc)["acc"]


def ablate_epsilon(spec: network.NetworkSpec, train_ds, test_ds, tc: TrainConfig,
                   fixed=(0.5, 1.0, 2.0), learned: bool = True) -> list:
    """Fixed-vs-learned temperature protocol: one run per setting, all
    from the same seed; reports accuracy, spike rate, and final eps."""
    if spec.kind not in neurons.ULTRA_KINDS:
        raise ConfigError("temperature ablation applies to the soft kinds")
    settings = [f"fixed:{v}" for v in fixed] + (["learned"] if learned else [])
    runs = []
    for setting in settings:
        run_tc = replace(tc, eps_mode=setting)
        result = train(spec, train_ds, test_ds, run_tc)
        final = result.metrics.rows[-1]
        eps_trajectory = [
            [r[f"eps_layer{i}"] for i in range(len(spec.hidden))]
            for r in result.metrics.rows
        ]
        runs.append({
            "eps_mode": setting,
            "final_acc": final["acc"],
            "best_acc": result.best_acc,
            "spike_soft": final["spike_soft"],
            "spike_hard": final["spike_hard"],
            "final_eps": eps_trajectory[-1],
            "eps_trajectory": eps_trajectory,
        })
    return runs
