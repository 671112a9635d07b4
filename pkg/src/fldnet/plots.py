"""Figures written next to the CSV outputs of ``train`` and ``eval``."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import FIELDS, MetricReport  # noqa: E402

# no timestamps or version strings, so identical runs give identical files
_PNG_META = {"Software": None}

LABELS = {"dice": "Dice", "iou": "IoU", "fbw": r"$F_\beta^w$", "s": r"$S_\alpha$",
          "me": r"$mE_\xi$", "maxe": r"$maxE_\xi$", "mae": "MAE"}


def plot_loss(history, path) -> None:
    steps = np.array([r.step for r in history])
    losses = np.array([r.loss for r in history])
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.plot(steps, losses, lw=1.0, color="0.2")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("total loss")
    lrs = np.array([r.lr for r in history])
    for s in steps[1:][np.diff(lrs) != 0]:
        ax.axvline(s, color="tab:red", lw=0.6, ls="--")
    ax.grid(alpha=0.3, lw=0.5)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_report(report: MetricReport, path) -> None:
    """Mean of each measure with per-image values scattered on top."""
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    x = np.arange(len(FIELDS))
    ax.bar(x, [report.means[k] for k in FIELDS], color="0.75", width=0.6)
    for i, k in enumerate(FIELDS):
        vals = [row[k] for row in report.per_image]
        ax.scatter(np.full(len(vals), i), vals, s=8, color="0.15", zorder=3)
    ax.set_xticks(x, [LABELS[k] for k in FIELDS])
    ax.set_ylim(0, 1.05)
    ax.set_title(f"{report.count} images", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
