"""Figure rendering for the report paths; every plot lands in a file."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_grayscale(path: str, grid: np.ndarray):
    plt.imsave(path, grid, cmap="gray", vmin=float(grid.min()), vmax=float(grid.max()))


def save_spectrum(path: str, log_mag: np.ndarray):
    plt.imsave(path, log_mag, cmap="viridis")


def loss_curves(path: str, epochs: list[dict]):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    xs = [e["epoch"] for e in epochs]
    for key in ("id_o", "tri_o", "id_h", "tri_h", "equilibrium", "total"):
        ax.plot(xs, [e[key] for e in epochs], label=key, linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def lr_trace(path: str, epochs: list[dict]):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot([e["epoch"] for e in epochs], [e["lr"] for e in epochs], linewidth=1.4)
    ax.set_xlabel("epoch")
    ax.set_ylabel("learning rate")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_curve(path: str, param: str, rows: list[dict]):
    """mAP vs parameter value, one line per seed plus the median."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    seeds = sorted({r["seed"] for r in rows})
    values = sorted({r["value"] for r in rows})
    for seed in seeds:
        pts = sorted((r["value"], r["map"]) for r in rows if r["seed"] == seed)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", alpha=0.45,
                linewidth=1.0, label=f"seed {seed}")
    medians = [float(np.median([r["map"] for r in rows if r["value"] == v])) for v in values]
    ax.plot(values, medians, marker="s", color="black", linewidth=2.0, label="median")
    ax.set_xlabel(param)
    ax.set_ylabel("mAP")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_bars(path: str, rows: list[dict]):
    """Median mAP per ablation stage, seed scatter overlaid."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    stages = []
    for r in rows:
        if r["stage"] not in stages:
            stages.append(r["stage"])
    medians = [
        float(np.median([r["map"] for r in rows if r["stage"] == s])) for s in stages
    ]
    xs = np.arange(len(stages))
    ax.bar(xs, medians, width=0.6, color="#4878a8")
    for i, s in enumerate(stages):
        ys = [r["map"] for r in rows if r["stage"] == s]
        ax.plot([i] * len(ys), ys, "k.", markersize=5)
    ax.set_xticks(xs, stages, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("mAP")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmc_points(path: str, report: dict):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ks = [1, 5, 10]
    ax.plot(ks, [report["rank1"], report["rank5"], report["rank10"]], marker="o")
    ax.set_xlabel("rank k")
    ax.set_ylabel("CMC@k")
    ax.set_ylim(0, 1.05)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def attention_overlay(path: str, image: np.ndarray, heat: np.ndarray):
    """Alpha-blend a [0, 1] heatmap over an H x W x 3 image, same raster dims."""
    overlay = np.clip(image * 0.55 + plt.cm.jet(heat)[..., :3] * 0.45, 0, 1)
    plt.imsave(path, overlay)


def selection_overlay(path: str, image: np.ndarray, selected: np.ndarray, patch: int):
    """Highlight selected patches; ``selected`` is a boolean (H/P) x (W/P) grid."""
    mask = np.kron(selected.astype(np.float64), np.ones((patch, patch)))
    dim = image * (0.35 + 0.65 * mask[..., None])
    plt.imsave(path, np.clip(dim, 0, 1))
