"""Figure rendering for the report paths.

Every function writes a PNG next to the delimited output it illustrates and
returns the path. Rendering is headless (Agg backend).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .models import CHANNEL_NAMES
from .training import METRICS_FIELDS


def _finish(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def loss_curves(metrics_csv, out_path) -> Path:
    """Plot the training metrics file: losses, penalty, critic gap."""
    raw = np.genfromtxt(metrics_csv, delimiter=",", names=True)
    raw = np.atleast_1d(raw)
    steps = raw["step"]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    panels = [
        (("critic_loss", "gen_loss"), "loss"),
        (("gp",), "gradient penalty"),
        (("wasserstein_gap",), "critic gap (real - fake)"),
        (("grad_norm_g", "grad_norm_d"), "gradient norm"),
    ]
    for ax, (fields, title) in zip(axes.ravel(), panels):
        for field in fields:
            ax.plot(steps, raw[field], label=field, linewidth=1.0)
        ax.set_title(title)
        ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
    for ax in axes[-1]:
        ax.set_xlabel("step")
    fig.suptitle("training metrics")
    fig.tight_layout()
    return _finish(fig, out_path)


def correlation_bars(report, out_path) -> Path:
    """Bar chart of per-channel correlation from a ChannelCorrelationReport."""
    labels = [f"{row.place}_{row.axis}" for row in report.rows]
    values = [row.r for row in report.rows]
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(range(len(labels)), values, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("r after alignment")
    ax.set_ylim(-1.05, 1.05)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    return _finish(fig, out_path)


def trajectory_panels(rows_by_place: dict, out_path) -> Path:
    """2D articulator paths, generated vs scaled real, one panel per place."""
    places = list(rows_by_place)
    fig, axes = plt.subplots(2, 3, figsize=(12, 7))
    for ax, place in zip(axes.ravel(), places):
        rows = rows_by_place[place]
        gx = [r[1] for r in rows if r[1] is not None]
        gy = [r[2] for r in rows if r[2] is not None]
        rx = [r[3] for r in rows if r[3] is not None]
        ry = [r[4] for r in rows if r[4] is not None]
        ax.plot(gx, gy, label="generated", linewidth=1.0)
        if rx:
            ax.plot(rx, ry, label="real (scaled)", linewidth=1.0, alpha=0.8)
        ax.set_title(place)
        ax.set_aspect("equal", adjustable="datalim")
        ax.grid(True, alpha=0.3)
    axes[0, 0].legend(fontsize=8)
    fig.suptitle("2D articulator trajectories")
    fig.tight_layout()
    return _finish(fig, out_path)


def smoothing_overlay(raw_channels: np.ndarray, smooth_channels: np.ndarray, out_path) -> Path:
    """Raw vs smoothed overlay, one panel per trajectory channel."""
    n = raw_channels.shape[0]
    cols = 4
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.2 * rows))
    axes = np.atleast_2d(axes)
    for idx in range(rows * cols):
        ax = axes.ravel()[idx]
        if idx >= n:
            ax.axis("off")
            continue
        ax.plot(raw_channels[idx], linewidth=0.7, alpha=0.6, label="raw")
        ax.plot(smooth_channels[idx], linewidth=1.1, label="smoothed")
        ax.set_title(CHANNEL_NAMES[idx] if idx < len(CHANNEL_NAMES) else str(idx), fontsize=8)
        ax.tick_params(labelsize=6)
    axes.ravel()[0].legend(fontsize=7)
    fig.suptitle("smoothing overlay")
    fig.tight_layout()
    return _finish(fig, out_path)
