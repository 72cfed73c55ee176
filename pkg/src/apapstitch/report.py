"""Benchmark reporting: delimited summaries and rendered figures.

All writers are deterministic: fixed float formats, no timestamps, and
PNG metadata stripped so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .adapt import AdaptState

_SAVEFIG_KW = {"dpi": 110, "metadata": {"Software": None}}


def write_rmse_csv(rows: list[dict], path) -> None:
    """rows: dicts with method, rmse, accepted, tried."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "rmse", "insertions_accepted", "insertions_tried"])
        for row in rows:
            writer.writerow(
                [row["method"], f"{row['rmse']:.6f}", row["accepted"], row["tried"]]
            )


def plot_rmse_bar(rows: list[dict], path) -> None:
    """Bar chart comparing alignment error across methods."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    names = [row["method"] for row in rows]
    values = [row["rmse"] for row in rows]
    ax.bar(names, values, color=["#888888", "#5577bb", "#338855"][: len(rows)])
    ax.set_ylabel("overlap RMSE (intensity)")
    ax.set_title("alignment error by method")
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.2f}", ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def plot_residual_panels(panels: list[tuple[str, np.ndarray]], path, vmax: float = 64.0) -> None:
    """Side-by-side residual heatmaps on a shared intensity scale."""
    fig, axes = plt.subplots(1, len(panels), figsize=(4.0 * len(panels), 3.4))
    if len(panels) == 1:
        axes = [axes]
    im = None
    for ax, (title, data) in zip(axes, panels):
        im = ax.imshow(data, cmap="magma", vmin=0.0, vmax=vmax)
        ax.set_title(title, fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=axes, shrink=0.85, label="|difference|")
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def plot_insertion_history(state: AdaptState, path, omega: float) -> None:
    """Search cost per adaptation round, accepted rounds highlighted."""
    fig, ax = plt.subplots(figsize=(5.6, 3.4))
    iters = [rec.iteration for rec in state.log]
    costs = [rec.cost if np.isfinite(rec.cost) else np.nan for rec in state.log]
    accepted = [rec.accepted for rec in state.log]
    if iters:
        ax.plot(iters, costs, color="#bbbbbb", linewidth=1.0, zorder=1)
        acc_i = [i for i, a in zip(iters, accepted) if a]
        acc_c = [c for c, a in zip(costs, accepted) if a]
        rej_i = [i for i, a in zip(iters, accepted) if not a]
        rej_c = [c for c, a in zip(costs, accepted) if not a]
        ax.scatter(rej_i, rej_c, marker="x", color="#bb4444", label="rejected", zorder=2)
        ax.scatter(acc_i, acc_c, marker="o", color="#338855", label="accepted", zorder=3)
        ax.legend(fontsize=9)
    ax.axhline(omega, color="#222222", linestyle="--", linewidth=0.8)
    ax.set_xlabel("adaptation round")
    ax.set_ylabel("search cost E")
    ax.set_yscale("log")
    ax.set_title("correspondence insertion history")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
