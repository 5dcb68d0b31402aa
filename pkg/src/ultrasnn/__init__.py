"""Ultradiscretized spiking neural networks: soft max-plus neurons with
exact reverse-mode gradients, surrogate-gradient baselines, a
deterministic training harness, and tropical-geometry expressivity
analysis."""

__version__ = "0.1.0"

from . import autodiff, encoding, errors, neurons, network, rng, training, tropical

__all__ = [
    "__version__",
    "autodiff",
    "encoding",
    "errors",
    "neurons",
    "network",
    "rng",
    "training",
    "tropical",
]
