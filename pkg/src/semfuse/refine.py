"""Instance-aware pseudo-label refinement.

Rendered label maps are instance-incoherent: one object can carry several
classes when partial views poisoned the fused votes. This module builds
prompts for a promptable instance segmenter (a fixed point grid, or boxes
and centroids of connected same-class regions), takes the returned binary
masks, votes the majority class under each mask, and overrides the covered
pixels, largest masks first, so small instances survive on top.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .labels import IGNORE_ID, LabelMap, ROLE_MULTIVIEW, ROLE_REFINED

STRATEGY_GRID = "grid"
STRATEGY_INFORMED = "informed"


@dataclass(frozen=True)
class Prompt:
    """A point and/or box query against one image."""

    id: int
    point: tuple[int, int] | None = None        # (u, v)
    bbox: tuple[int, int, int, int] | None = None  # (u0, v0, u1, v1) inclusive

    def __post_init__(self):
        if self.point is None and self.bbox is None:
            raise ValueError("prompt needs a point or a bbox")
        if self.bbox is not None:
            u0, v0, u1, v1 = self.bbox
            if u1 < u0 or v1 < v0:
                raise ValueError(f"degenerate bbox {self.bbox}")


class InstanceMask:
    """Binary mask answering one prompt."""

    __slots__ = ("prompt_id", "bitmap", "area")

    def __init__(self, prompt_id: int, bitmap: np.ndarray):
        bitmap = np.asarray(bitmap, dtype=bool)
        if bitmap.ndim != 2:
            raise ValueError("mask bitmap must be 2-D")
        area = int(bitmap.sum())
        if area == 0:
            raise ValueError("mask has no set pixels")
        self.prompt_id = int(prompt_id)
        self.bitmap = bitmap
        self.area = area

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]


@dataclass
class Cluster:
    """Connected region of same-class pixels in a label map."""

    class_id: int
    pixels: np.ndarray            # (N, 2) int (v, u), scanline order
    bbox: tuple[int, int, int, int]
    centroid: tuple[float, float]  # (u, v), continuous

    @property
    def area(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class RefinementConfig:
    strategy: str = STRATEGY_GRID
    grid_spacing: int = 32
    min_area_pct: float = 0.1
    connectivity: int = 8

    def __post_init__(self):
        if self.strategy not in (STRATEGY_GRID, STRATEGY_INFORMED):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.grid_spacing < 1:
            raise ValueError("grid spacing must be >= 1")
        if not 0 <= self.min_area_pct < 100:
            raise ValueError("min_area_pct must be in [0, 100)")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


def grid_prompts(width: int, height: int, d: int) -> list[Prompt]:
    """Point prompts on a fixed lattice with spacing d, anchored at (d//2, d//2).

    If the anchor already falls outside the image the grid degenerates to a
    single point at the image center.
    """
    if d < 1:
        raise ValueError(f"grid spacing must be >= 1, got {d}")
    anchor = d // 2
    us = range(anchor, width, d)
    vs = range(anchor, height, d)
    prompts = [
        Prompt(i, point=(u, v))
        for i, (v, u) in enumerate((v, u) for v in vs for u in us)
    ]
    if not prompts:
        prompts = [Prompt(0, point=(width // 2, height // 2))]
    return prompts


def connected_components(labels: LabelMap, connectivity: int = 8) -> list[Cluster]:
    """Partition non-ignore pixels into connected same-class regions.

    Clusters are returned in scanline order of their first pixel.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    structure = np.ones((3, 3), dtype=bool) if connectivity == 8 else \
        ndimage.generate_binary_structure(2, 1)
    data = labels.data
    clusters: list[Cluster] = []
    for class_id in np.unique(data):
        if class_id == IGNORE_ID:
            continue
        lab, n = ndimage.label(data == class_id, structure=structure)
        for region in range(1, n + 1):
            vs, us = np.nonzero(lab == region)
            u0, u1 = int(us.min()), int(us.max())
            v0, v1 = int(vs.min()), int(vs.max())
            clusters.append(Cluster(
                class_id=int(class_id),
                pixels=np.column_stack([vs, us]),
                bbox=(u0, v0, u1, v1),
                centroid=(float(us.mean()), float(vs.mean())),
            ))
    clusters.sort(key=lambda c: (int(c.pixels[0, 0]), int(c.pixels[0, 1])))
    return clusters


def informed_prompts(labels: LabelMap, a_pct: float = 0.1,
                     connectivity: int = 8) -> list[Prompt]:
    """Box+point prompts from rendered-label clusters above the area threshold.

    Each retained cluster yields its tight bbox and a point snapped to the
    member pixel nearest the centroid (a raw centroid of a concave region can
    fall outside it). Prompt ids run over clusters by descending area.
    """
    if labels.role != ROLE_MULTIVIEW:
        raise ValueError(f"informed prompting expects a multiview map, got {labels.role!r}")
    threshold = a_pct / 100.0 * labels.width * labels.height
    clusters = [c for c in connected_components(labels, connectivity)
                if c.area >= threshold]
    clusters.sort(key=lambda c: -c.area)  # stable: scanline order breaks ties
    prompts = []
    for i, c in enumerate(clusters):
        cu, cv = c.centroid
        d2 = (c.pixels[:, 1] - cu) ** 2 + (c.pixels[:, 0] - cv) ** 2
        v, u = c.pixels[int(np.argmin(d2))]
        prompts.append(Prompt(i, point=(int(u), int(v)), bbox=c.bbox))
    return prompts


def majority_class(mask: InstanceMask, labels: LabelMap) -> int | None:
    """Most frequent non-ignore class under the mask; ties to the lowest id.

    Returns None when every covered pixel is ignored.
    """
    if mask.bitmap.shape != labels.data.shape:
        raise ValueError(
            f"mask {mask.bitmap.shape} does not match labels {labels.data.shape}")
    covered = labels.data[mask.bitmap]
    covered = covered[covered != IGNORE_ID]
    if covered.size == 0:
        return None
    counts = np.bincount(covered)
    return int(np.argmax(counts))


def order_masks(masks: list[InstanceMask], strategy: str) -> list[InstanceMask]:
    """Canonical application order.

    Grid masks overlap heavily, so they are applied largest first and small
    instances override later; informed masks come from disjoint clusters and
    keep their prompt order.
    """
    if strategy == STRATEGY_GRID:
        return sorted(masks, key=lambda m: (-m.area, m.prompt_id))
    if strategy == STRATEGY_INFORMED:
        return sorted(masks, key=lambda m: m.prompt_id)
    raise ValueError(f"unknown strategy {strategy!r}")


def refine_frame(y_mc: LabelMap, masks: list[InstanceMask],
                 strategy: str = STRATEGY_GRID) -> LabelMap:
    """Override each mask's pixels with its majority class, in canonical order.

    Pixels covered by no mask keep their rendered value; masks whose covered
    pixels are all ignored are skipped so they cannot erase information.
    """
    out = y_mc.data.copy()
    for mask in order_masks(masks, strategy):
        if mask.bitmap.shape != out.shape:
            raise ValueError(
                f"mask {mask.bitmap.shape} does not match labels {out.shape}")
        winner = majority_class(mask, y_mc)
        if winner is None:
            continue
        out[mask.bitmap] = winner
    return LabelMap(out, ROLE_REFINED)


def overlap_stats(masks: list[InstanceMask]) -> dict[str, int]:
    """How much the mask set self-overlaps (diagnostic for informed prompts)."""
    if not masks:
        return {"masks": 0, "covered_pixels": 0, "overlapping_pixels": 0}
    coverage = np.zeros(masks[0].bitmap.shape, dtype=np.int32)
    for m in masks:
        coverage += m.bitmap
    return {
        "masks": len(masks),
        "covered_pixels": int((coverage > 0).sum()),
        "overlapping_pixels": int((coverage > 1).sum()),
    }
