"""Figure rendering for run outputs.

Every CLI report path drops PNG figures next to its delimited output.
The CSV/JSON files remain the canonical interface; figures are a
convenience rendering and never gate a run.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

_PNG_META = {"Software": "ultrasnn"}


def _save(fig, path):
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata=_PNG_META)
    plt.close(fig)
    return path


def save_training_figures(rows, columns, outdir):
    """Loss/accuracy/spike-rate curves (training_curves.png) and, for
    the soft kinds, the temperature trajectory (eps_trajectory.png)."""
    paths = []
    epochs = [r["epoch"] for r in rows]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    axes[0, 0].plot(epochs, [r["loss"] for r in rows], marker="o", ms=3)
    axes[0, 0].set_title("train loss")
    axes[0, 1].plot(epochs, [r["acc"] for r in rows], marker="o", ms=3, color="tab:green")
    axes[0, 1].set_title("test accuracy")
    axes[1, 0].plot(epochs, [r["spike_soft"] for r in rows], label="soft")
    axes[1, 0].plot(epochs, [r["spike_hard"] for r in rows], label="hard", ls="--")
    axes[1, 0].set_title("mean spike rate")
    axes[1, 0].legend(fontsize=8)
    axes[1, 1].plot(epochs, [r["energy"] for r in rows], color="tab:red")
    axes[1, 1].set_title("energy (T * rate)")
    for ax in axes.flat:
        ax.set_xlabel("epoch")
    fig.tight_layout()
    paths.append(_save(fig, os.path.join(outdir, "training_curves.png")))

    eps_cols = [c for c in columns if c.startswith("eps_layer")]
    if eps_cols:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for c in eps_cols:
            ax.plot(epochs, [r[c] for r in rows], label=c)
        ax.set_xlabel("epoch")
        ax.set_ylabel("temperature")
        ax.set_title("learned temperature trajectory")
        ax.legend(fontsize=8)
        fig.tight_layout()
        paths.append(_save(fig, os.path.join(outdir, "eps_trajectory.png")))
    return paths


def save_ablation_figure(runs, outdir):
    """Fixed-vs-learned temperature comparison: accuracy bars plus the
    per-run temperature trajectories."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    names = [r["eps_mode"] for r in runs]
    ax1.bar(range(len(runs)), [r["final_acc"] for r in runs], color="tab:blue")
    ax1.set_xticks(range(len(runs)), names, rotation=20, fontsize=8)
    ax1.set_ylabel("final test accuracy")
    for r in runs:
        traj = [row[0] for row in r["eps_trajectory"]]
        ax2.plot(range(len(traj)), traj, label=r["eps_mode"])
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("temperature (layer 0)")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    return [_save(fig, os.path.join(outdir, "eps_ablation.png"))]


def save_arrangement_figure(W, offsets, report, outdir, half_width=4.0):
    """n=2 only: the hyperplane lines with the counted-vs-formula regions
    in the title."""
    W = np.atleast_2d(W)
    if W.shape[1] != 2:
        return []
    fig, ax = plt.subplots(figsize=(4.4, 4.4))
    xs = np.linspace(-half_width, half_width, 200)
    for (a, b), c in zip(W, np.ravel(offsets)):
        if abs(b) > 1e-12:
            ax.plot(xs, (c - a * xs) / b, lw=1)
        elif abs(a) > 1e-12:
            ax.axvline(c / a, lw=1)
    ax.set_xlim(-half_width, half_width)
    ax.set_ylim(-half_width, half_width)
    ax.set_title(f"regions: {report['empirical']} (formula {report['formula']})",
                 fontsize=10)
    fig.tight_layout()
    return [_save(fig, os.path.join(outdir, "regions.png"))]


def save_zonotope_figure(W, volume, outdir):
    """n=2 only: the zonogon outline built by angle-sorting generators."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if W.shape[1] != 2:
        return []
    gens = np.array([w if w[1] > 0 or (w[1] == 0 and w[0] > 0) else -w for w in W])
    order = np.argsort(np.arctan2(gens[:, 1], gens[:, 0]))
    halfsum = gens.sum(axis=0) / 2.0
    boundary = [-halfsum]
    for g in gens[order]:
        boundary.append(boundary[-1] + g)
    for g in gens[order]:
        boundary.append(boundary[-1] - g)
    pts = np.array(boundary)
    fig, ax = plt.subplots(figsize=(4.4, 4.4))
    ax.fill(pts[:, 0], pts[:, 1], alpha=0.35)
    ax.plot(pts[:, 0], pts[:, 1], lw=1.2)
    for w in W:
        ax.plot([0.0, w[0]], [0.0, w[1]], lw=1, ls=":", color="k")
    ax.set_aspect("equal")
    ax.set_title(f"zonotope volume {volume:.4g}", fontsize=10)
    fig.tight_layout()
    return [_save(fig, os.path.join(outdir, "zonotope.png"))]


def save_temporal_figure(result, outdir):
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.bar([0, 1], [result["count"], result["bound"]], color=["tab:blue", "tab:gray"])
    ax.set_xticks([0, 1], ["counted", "bound"])
    ax.set_yscale("log")
    ax.set_title(f"T={result['timesteps']} spike-sequence count", fontsize=10)
    fig.tight_layout()
    return [_save(fig, os.path.join(outdir, "temporal_regions.png"))]


def save_energy_figure(rows, outdir):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = [r["epoch"] for r in rows]
    ax.plot(epochs, [r["energy"] for r in rows], marker="o", ms=3, color="tab:red")
    ax.set_xlabel("epoch")
    ax.set_ylabel("relative SOP count")
    ax.set_title("energy trajectory")
    fig.tight_layout()
    return [_save(fig, os.path.join(outdir, "energy.png"))]
