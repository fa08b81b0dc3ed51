"""Confusion-matrix accumulation and per-class IoU / mIoU scoring."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .labels import IGNORE_ID, LabelMap, LabelSpace


class ConfusionMatrix:
    """C x (C+1) counts: rows are ground truth, columns are predictions.

    The extra last column collects pixels a prediction left ignored while the
    ground truth was labeled; those are real misses and count as FN. Pixels
    ignored in the ground truth are skipped and tallied separately.
    """

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.matrix = np.zeros((num_classes, num_classes + 1), dtype=np.int64)
        self.ignored = 0

    def accumulate(self, pred: LabelMap, gt: LabelMap) -> "ConfusionMatrix":
        if pred.data.shape != gt.data.shape:
            raise ValueError(
                f"prediction {pred.data.shape} does not match gt {gt.data.shape}")
        c = self.num_classes
        g = gt.data.reshape(-1).astype(np.int64)
        p = pred.data.reshape(-1).astype(np.int64)
        valid = g != IGNORE_ID
        self.ignored += int((~valid).sum())
        g = g[valid]
        p = p[valid]
        p = np.where(p == IGNORE_ID, c, p)
        if g.size and (g.max() >= c or p.max() > c):
            raise ValueError("label value outside the class range")
        self.matrix += np.bincount(
            g * (c + 1) + p, minlength=c * (c + 1)).reshape(c, c + 1)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge matrices over different class counts")
        self.matrix += other.matrix
        self.ignored += other.ignored
        return self

    def total(self) -> int:
        return int(self.matrix.sum())

    def class_counts(self, class_id: int) -> tuple[int, int, int]:
        """(TP, FP, FN) for one class; predicted-ignore pixels land in FN."""
        tp = int(self.matrix[class_id, class_id])
        fp = int(self.matrix[:, class_id].sum()) - tp
        fn = int(self.matrix[class_id, :].sum()) - tp
        return tp, fp, fn

    def iou_per_class(self) -> list[tuple[int, float | None]]:
        """IoU per class; None where the class never appears on either side."""
        out = []
        for class_id in range(self.num_classes):
            tp, fp, fn = self.class_counts(class_id)
            denom = tp + fp + fn
            out.append((class_id, tp / denom if denom else None))
        return out

    def miou(self) -> float:
        defined = [iou for _, iou in self.iou_per_class() if iou is not None]
        if not defined:
            raise ValueError("mIoU undefined: no class has any pixel")
        return float(np.mean(defined))


def accumulate(cm: ConfusionMatrix, pred: LabelMap, gt: LabelMap) -> ConfusionMatrix:
    return cm.accumulate(pred, gt)


def write_report(cm: ConfusionMatrix, space: LabelSpace, out_dir: str | Path,
                 title: str = "evaluation") -> dict[str, Path]:
    """Per-class CSV plus a human-readable text table; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    txt_path = out_dir / "report.txt"

    rows = []
    for class_id, iou in cm.iou_per_class():
        tp, fp, fn = cm.class_counts(class_id)
        if tp + fp + fn == 0:
            continue
        rows.append((class_id, space.name(class_id), tp, fp, fn, iou))

    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class_id", "name", "tp", "fp", "fn", "iou"])
        for class_id, name, tp, fp, fn, iou in rows:
            writer.writerow([class_id, name, tp, fp, fn, f"{iou:.6f}"])

    miou = cm.miou() if rows else float("nan")
    lines = [f"{title}",
             f"{'id':>4} {'class':<16} {'tp':>10} {'fp':>10} {'fn':>10} {'iou':>8}"]
    for class_id, name, tp, fp, fn, iou in rows:
        lines.append(f"{class_id:>4} {name:<16} {tp:>10} {fp:>10} {fn:>10} {iou:>8.4f}")
    lines.append("")
    lines.append(f"mIoU over {len(rows)} classes: {miou:.4f}")
    lines.append(f"compared pixels: {cm.total()}, gt-ignored: {cm.ignored}")
    txt_path.write_text("\n".join(lines) + "\n")
    return {"csv": csv_path, "txt": txt_path}
