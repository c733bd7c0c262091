"""Matplotlib figure rendering for the batch commands.

Figures are written to files next to the CSV output; nothing here opens a
display, the Agg backend is forced on import.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .pyramid import DisparityMap, Image, colorize_disparity


def save_disparity_figure(
    d: DisparityMap, path, max_d: float, title: str = ""
) -> None:
    """Colorized disparity panel with a colorbar, invalid pixels black."""
    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    preview = colorize_disparity(d, max_d)
    ax.imshow(preview.data, interpolation="nearest")
    fig.colorbar(
        plt.cm.ScalarMappable(
            norm=plt.Normalize(0, max_d), cmap="turbo"
        ),
        ax=ax,
        label="disparity (px)",
    )
    if title:
        ax.set_title(title)
    ax.set_axis_off()
    fig.savefig(str(path), bbox_inches="tight")
    plt.close(fig)


def save_voting_figure(v: np.ndarray, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    im = ax.imshow(v, cmap="viridis", vmin=0, vmax=2, interpolation="nearest")
    fig.colorbar(im, ax=ax, ticks=[0, 1, 2], label="votes against")
    ax.set_axis_off()
    fig.savefig(str(path), bbox_inches="tight")
    plt.close(fig)


def save_eval_figure(names: list[str], aepes: list[float], path) -> None:
    """Per-pair AEPE bar chart for the evaluation report."""
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(names)), 4), dpi=120)
    ax.bar(range(len(names)), aepes, color="#3b6ea5")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("AEPE (px)")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(str(path))
    plt.close(fig)


def save_iteration_figure(aepes_or_means: list[float], path, ylabel: str) -> None:
    """Per-iteration trace for the forward demo."""
    fig, ax = plt.subplots(figsize=(5, 3.5), dpi=120)
    ax.plot(range(1, len(aepes_or_means) + 1), aepes_or_means, marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(str(path))
    plt.close(fig)
