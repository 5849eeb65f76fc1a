"""Figure rendering for the report paths.

Every CSV the command line emits gets a PNG sibling so a run directory is
readable at a glance. The CSVs stay the machine-readable interface; these
are convenience views only.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curves(report, path) -> None:
    """Error per iteration, with the regularization trace when present."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(report.iterations, report.errors, marker="o", ms=3, lw=1.2, color="tab:blue")
    ax.set_xlabel("iteration")
    ax.set_ylabel("quantization error")
    ax.grid(alpha=0.3)
    if any(v > 0 for v in report.lams):
        twin = ax.twinx()
        twin.plot(report.iterations, report.eps_stds, lw=1.0, color="tab:red", label="std(eps)")
        twin.set_ylabel("std(eps)", color="tab:red")
        twin.tick_params(axis="y", labelcolor="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_mutual_info_heatmap(matrix, path) -> None:
    """Entropy diagonal and pairwise MI as a heatmap."""
    values = np.asarray(matrix.values)
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    im = ax.imshow(values, cmap="viridis")
    ax.set_xlabel("codebook")
    ax.set_ylabel("codebook")
    fig.colorbar(im, ax=ax, label="bits")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_error_vs_stages(pairs, path) -> None:
    stages = [m for m, _ in pairs]
    errors = [e for _, e in pairs]
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(stages, errors, marker="s", ms=4, lw=1.2, color="tab:green")
    ax.set_xlabel("stages used")
    ax.set_ylabel("quantization error")
    ax.set_xticks(stages)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_recall_curve(points, path) -> None:
    """points: list of (R, recall) pairs."""
    rs = [r for r, _ in points]
    recalls = [v for _, v in points]
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.semilogx(rs, recalls, marker="o", ms=4, lw=1.2, color="tab:purple")
    ax.set_xlabel("R")
    ax.set_ylabel("recall@R")
    ax.set_ylim(0.0, 1.05)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
