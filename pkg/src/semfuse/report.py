"""Matplotlib figures written next to the delimited reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluate import ConfusionMatrix
from .labels import LabelSpace


def plot_per_class_iou(cm: ConfusionMatrix, space: LabelSpace,
                       path: str | Path, title: str = "per-class IoU") -> Path:
    pairs = [(space.name(c), iou) for c, iou in cm.iou_per_class() if iou is not None]
    names = [n for n, _ in pairs]
    ious = [v for _, v in pairs]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * len(names) + 1.5), 3.6))
    ax.bar(range(len(names)), ious, color="#4878cf")
    if ious:
        miou = cm.miou()
        ax.axhline(miou, color="#d65f5f", lw=1.2, ls="--", label=f"mIoU = {miou:.3f}")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    ax.set_ylim(0, 1.02)
    ax.set_ylabel("IoU")
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_stage_miou(stage_mious: dict[str, float], path: str | Path,
                    title: str = "pseudo-label quality by stage") -> Path:
    names = list(stage_mious)
    vals = [stage_mious[n] for n in names]
    fig, ax = plt.subplots(figsize=(1. + 1.1 * max(4, len(names)), 3.2))
    bars = ax.bar(range(len(names)), vals, color="#6acc65")
    for b, v in zip(bars, vals):
        ax.text(b.get_x() + b.get_width() / 2, v + 0.01, f"{v:.3f}",
                ha="center", fontsize=8)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, fontsize=9)
    ax.set_ylim(0, min(1.05, max(vals) * 1.25 + 0.05) if vals else 1.0)
    ax.set_ylabel("mIoU")
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
