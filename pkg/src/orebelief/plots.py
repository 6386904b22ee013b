"""Figure rendering for the report paths: galleries, curves, trends, returns.

All functions write PNG files next to the delimited outputs and return
the path written.  matplotlib runs on the Agg backend.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_map_gallery(maps: np.ndarray, path, title: str = "ore maps", n_show: int = 16):
    n = min(n_show, len(maps))
    ncols = 4
    nrows = int(np.ceil(n / ncols))
    fig, axes = plt.subplots(nrows, ncols, figsize=(2.2 * ncols, 2.2 * nrows))
    for i, ax in enumerate(np.atleast_1d(axes).ravel()):
        ax.axis("off")
        if i < n:
            im = ax.imshow(maps[i], vmin=0, vmax=1, cmap="viridis")
    fig.suptitle(title)
    fig.colorbar(im, ax=np.atleast_1d(axes).ravel().tolist(), shrink=0.8)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_training_curve(curve_rows, path, kind: str):
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [r[0] for r in curve_rows]
    if kind == "gan":
        ax.plot(epochs, [r[1] for r in curve_rows], label="discriminator loss")
        ax.plot(epochs, [r[2] for r in curve_rows], label="generator loss")
    else:
        ax.plot(epochs, [r[1] for r in curve_rows], label="noise-prediction loss")
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.set_title(f"{kind} training")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_metric_trends(trend: dict, path, label: str = "belief"):
    """Metric means vs trajectory length, one panel per metric."""
    metrics = ["min_l2", "obs_error", "value_error", "decision", "density", "wall_clock"]
    titles = ["min L2", "observation error", "ore value error", "decision accuracy",
              "prob. density of value", "sampling wall clock (s)"]
    ks = sorted(trend)
    fig, axes = plt.subplots(2, 3, figsize=(13, 7))
    for ax, m, t in zip(axes.ravel(), metrics, titles):
        ax.plot(ks, [trend[k][m] for k in ks], marker="o")
        ax.set_xlabel("observations")
        ax.set_title(t)
    fig.suptitle(f"belief metrics vs history length: {label}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_planning_returns(per_solver: dict[str, list], path):
    fig, ax = plt.subplots(figsize=(1.6 * max(4, len(per_solver)), 4.5))
    labels = list(per_solver)
    ax.boxplot([per_solver[k] for k in labels], tick_labels=labels)
    ax.set_ylabel("episode return")
    ax.set_title("planning returns by solver")
    ax.axhline(0.0, color="gray", lw=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)
