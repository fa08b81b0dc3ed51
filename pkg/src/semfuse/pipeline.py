"""Stage orchestration: integrate -> render -> prompts -> refine -> eval -> manifest.

Every stage consumes only the previous stage's on-disk artifacts, so stages
can be re-run independently and reruns are bit-identical for identical
inputs and configuration.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .dataset import Sequence, FrameRecord, ingest_scene, load_frame, \
    read_label_png, write_label_png
from .errors import ConfigError, DataError
from .evaluate import ConfusionMatrix, write_report
from .labels import LabelSpace, ROLE_GROUND_TRUTH, ROLE_MULTIVIEW, ROLE_RAW, \
    ROLE_REFINED
from .refine import STRATEGY_GRID, STRATEGY_INFORMED, grid_prompts, \
    informed_prompts, overlap_stats, refine_frame
from .report import plot_per_class_iou, plot_stage_miou
from .segmenter import FileExchangeSegmenter, MaskRequest, OracleSegmenter, \
    request_masks
from .synthetic import load_scene_spec
from .volume import LabelRenderer, SemanticVolume, load_volume, save_volume

log = logging.getLogger(__name__)

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

STRATEGIES = (STRATEGY_GRID, STRATEGY_INFORMED)


@dataclass(frozen=True)
class PipelineConfig:
    voxel_size: float = 0.05
    truncation_factor: float = 2.0
    max_range: float = 8.0
    num_classes: int = 40
    strategy: str = "both"            # grid | informed | both
    grid_spacing: int = 32
    min_area_pct: float = 0.1
    connectivity: int = 8
    segmenter: str = "oracle"         # oracle | exchange
    exchange_timeout: float = 600.0
    poll_interval: float = 0.5
    train_fraction: float = 0.8
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ConfigError(f"voxel size must be positive, got {self.voxel_size}")
        if self.truncation_factor < 1.0:
            raise ConfigError("truncation factor must be >= 1")
        if self.strategy not in ("grid", "informed", "both"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.segmenter not in ("oracle", "exchange"):
            raise ConfigError(f"unknown segmenter {self.segmenter!r}")
        if self.grid_spacing < 1:
            raise ConfigError("grid spacing must be >= 1")
        if not 0 <= self.min_area_pct < 100:
            raise ConfigError("min-area-pct must be in [0, 100)")
        if self.connectivity not in (4, 8):
            raise ConfigError("connectivity must be 4 or 8")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("train fraction must be in (0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def truncation(self) -> float:
        return self.voxel_size * self.truncation_factor

    def strategies(self) -> tuple[str, ...]:
        return STRATEGIES if self.strategy == "both" else (self.strategy,)

    def label_space(self) -> LabelSpace:
        return LabelSpace(num_classes=self.num_classes)

    @staticmethod
    def from_toml(path: str | Path, **overrides) -> "PipelineConfig":
        try:
            with open(path, "rb") as f:
                doc = _toml.load(f)
        except (OSError, _toml.TOMLDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        known = set(PipelineConfig.__dataclass_fields__)
        bad = set(doc) - known
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return PipelineConfig(**doc)
        except TypeError as e:
            raise ConfigError(str(e)) from e


def _parallel(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- stages ---------------------------------------------------------------------


def run_integrate(seq: Sequence, config: PipelineConfig, out_dir: str | Path) -> Path:
    """Fuse the train split into a volume file plus a stats sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    volume = SemanticVolume(config.voxel_size, config.truncation,
                            config.num_classes)
    totals = None
    n_frames = 0
    for record in seq.train_split():
        frame = load_frame(seq, record)
        if frame.prediction is None:
            raise DataError(f"frame {record.index:06d} has no prediction image")
        stats = volume.integrate_frame(frame, seq.intrinsics, config.max_range)
        totals = stats if totals is None else totals.merged(stats)
        n_frames += 1
    volume_path = out_dir / "volume.svol"
    save_volume(volume, volume_path)
    sidecar = {
        "frames": n_frames,
        "points_integrated": totals.points_integrated,
        "semantic_points": totals.semantic_points,
        "voxels_updated": totals.voxels_updated,
        "allocated_blocks": len(volume.blocks),
        "voxel_size": config.voxel_size,
    }
    (out_dir / "integrate_stats.json").write_text(
        json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    log.info("integrated %d frames -> %s", n_frames, volume_path)
    return volume_path


def run_render(seq: Sequence, config: PipelineConfig, out_dir: str | Path) -> Path:
    """Render a multi-view label map at every train pose from the volume file."""
    out_dir = Path(out_dir)
    volume = load_volume(out_dir / "volume.svol")
    renderer = LabelRenderer(volume)
    labels_dir = out_dir / "labels_mc"
    labels_dir.mkdir(parents=True, exist_ok=True)

    def render_one(record: FrameRecord):
        frame = load_frame(seq, record)
        labels = renderer.render(frame.pose, seq.intrinsics, config.max_range)
        write_label_png(labels.data, labels_dir / f"{record.index:06d}.png")

    _parallel(render_one, seq.train_split(), config.workers)
    return labels_dir


def _exchange_dir(out_dir: Path, strategy: str) -> Path:
    return out_dir / f"exchange_{strategy}"


def _build_prompts(seq: Sequence, config: PipelineConfig, out_dir: Path,
                   strategy: str, record: FrameRecord):
    intr = seq.intrinsics
    if strategy == STRATEGY_GRID:
        return grid_prompts(intr.width, intr.height, config.grid_spacing)
    labels = read_label_png(out_dir / "labels_mc" / f"{record.index:06d}.png",
                            ROLE_MULTIVIEW)
    return informed_prompts(labels, config.min_area_pct, config.connectivity)


def run_prompts(seq: Sequence, config: PipelineConfig, out_dir: str | Path,
                strategy: str) -> Path:
    """Write one prompts file per train frame for an external segmenter."""
    out_dir = Path(out_dir)
    exchange = _exchange_dir(out_dir, strategy)
    exchange.mkdir(parents=True, exist_ok=True)
    from .segmenter import write_mask_request

    for record in seq.train_split():
        prompts = _build_prompts(seq, config, out_dir, strategy, record)
        if not prompts:
            log.warning("frame %06d: no %s prompts", record.index, strategy)
            continue
        request = MaskRequest(record.index, _relative_image(record, exchange),
                              seq.intrinsics.width, seq.intrinsics.height, prompts)
        write_mask_request(request, exchange)
    return exchange


def _relative_image(record: FrameRecord, exchange: Path) -> str:
    if record.color_path is None:
        return ""
    import os
    return os.path.relpath(Path(record.color_path).resolve(), exchange.resolve())


def _make_segmenter(seq: Sequence, config: PipelineConfig, exchange: Path):
    if config.segmenter == "oracle":
        spec_path = seq.scene_dir / "scene.toml"
        if not spec_path.exists():
            raise ConfigError(
                f"oracle segmenter needs {spec_path} (synthetic scenes only)")
        scene, intr, _, _ = load_scene_spec(spec_path)
        poses = {}
        for record in seq.frames:
            poses[record.index] = load_frame(seq, record).pose
        return OracleSegmenter(scene, intr, poses)
    return FileExchangeSegmenter(exchange, config.exchange_timeout,
                                 config.poll_interval)


def run_refine(seq: Sequence, config: PipelineConfig, out_dir: str | Path,
               strategy: str) -> Path:
    """Refine every rendered train label map with instance masks."""
    out_dir = Path(out_dir)
    exchange = _exchange_dir(out_dir, strategy)
    exchange.mkdir(parents=True, exist_ok=True)
    segmenter = _make_segmenter(seq, config, exchange)
    refined_dir = out_dir / f"labels_ir_{strategy}"
    refined_dir.mkdir(parents=True, exist_ok=True)

    def refine_one(record: FrameRecord) -> int:
        labels = read_label_png(out_dir / "labels_mc" / f"{record.index:06d}.png",
                                ROLE_MULTIVIEW)
        prompts = _build_prompts(seq, config, out_dir, strategy, record)
        overlap = 0
        if prompts:
            request = MaskRequest(record.index, _relative_image(record, exchange),
                                  seq.intrinsics.width, seq.intrinsics.height, prompts)
            response = request_masks(segmenter, request)
            refined = refine_frame(labels, response.masks, strategy)
            overlap = overlap_stats(response.masks)["overlapping_pixels"]
        else:
            refined = labels.copy(role=ROLE_REFINED)
        write_label_png(refined.data, refined_dir / f"{record.index:06d}.png")
        return overlap

    total_overlap = sum(_parallel(refine_one, seq.train_split(), config.workers))
    if total_overlap:
        log.info("%s refinement: %d overlapping mask pixels", strategy, total_overlap)
    return refined_dir


def run_eval(seq: Sequence, config: PipelineConfig, pred_dir: str | Path | None,
             out_dir: str | Path, name: str, split: str = "train") -> float:
    """Score a directory of predicted label images (or the sequence's own raw
    predictions when pred_dir is None) against ground truth; writes the
    CSV/text report and the per-class IoU figure, returns mIoU."""
    out_dir = Path(out_dir)
    space = config.label_space()
    cm = ConfusionMatrix(config.num_classes)
    compared = 0
    for record in seq.split(split):
        if record.gt_path is None:
            continue
        gt = read_label_png(record.gt_path, ROLE_GROUND_TRUTH)
        if pred_dir is None:
            if record.pred_path is None:
                continue
            pred = read_label_png(record.pred_path, ROLE_RAW)
        else:
            pred_path = Path(pred_dir) / f"{record.index:06d}.png"
            if not pred_path.exists():
                continue
            pred = read_label_png(pred_path, ROLE_RAW)
        cm.accumulate(pred, gt)
        compared += 1
    if compared == 0:
        raise DataError(f"no frames with ground truth to evaluate in split {split!r}")
    report_dir = out_dir / f"eval_{name}"
    write_report(cm, space, report_dir, title=f"{name} ({split} split)")
    plot_per_class_iou(cm, space, report_dir / "per_class_iou.png",
                       title=f"{name}: per-class IoU ({split})")
    return cm.miou()


def emit_manifest(seq: Sequence, out_dir: str | Path, strategies: tuple[str, ...],
                  label_dirs: dict[str, Path]) -> Path:
    """Hand-off file for an external trainer: one record per (image, label).

    Paths are relative to the manifest's own directory so reruns into other
    output roots stay byte-identical. With both strategies the same image
    appears twice, once per strategy; the note reminds the trainer to halve
    epochs to keep the budget constant.
    """
    import os

    out_dir = Path(out_dir)
    records = []
    for record in seq.train_split():
        if record.color_path is None:
            raise DataError(f"frame {record.index:06d} has no color image for the manifest")
        for strategy in strategies:
            label = Path(label_dirs[strategy]) / f"{record.index:06d}.png"
            if not label.exists():
                raise DataError(f"missing refined labels {label}")
            records.append({
                "image": os.path.relpath(Path(record.color_path).resolve(),
                                         out_dir.resolve()),
                "label": os.path.relpath(label.resolve(), out_dir.resolve()),
                "strategy": strategy,
            })
    tag = "gi" if len(strategies) == 2 else strategies[0]
    note = ("images appear once per strategy inside an epoch; halve the epoch "
            "count to keep the training budget constant"
            if len(strategies) == 2 else "one record per train image")
    payload = {"strategies": list(strategies), "epoch_weighting": note,
               "records": records}
    path = out_dir / f"manifest_{tag}.json"
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path


def run_pipeline(scene_dir: str | Path, config: PipelineConfig,
                 out_dir: str | Path) -> dict[str, float]:
    """All stages on one scene; returns mIoU per pseudo-label stage."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seq = ingest_scene(scene_dir, config.train_fraction)
    run_integrate(seq, config, out_dir)
    run_render(seq, config, out_dir)
    label_dirs: dict[str, Path] = {}
    for strategy in config.strategies():
        run_prompts(seq, config, out_dir, strategy)
        label_dirs[strategy] = run_refine(seq, config, out_dir, strategy)

    mious = {"pred": run_eval(seq, config, None, out_dir, "pred")}
    mious["mc"] = run_eval(seq, config, out_dir / "labels_mc", out_dir, "mc")
    for strategy in config.strategies():
        mious[f"ir_{strategy}"] = run_eval(
            seq, config, label_dirs[strategy], out_dir, f"ir_{strategy}")

    emit_manifest(seq, out_dir, config.strategies(), label_dirs)
    summary_lines = ["stage,miou"]
    for stage, miou in mious.items():
        summary_lines.append(f"{stage},{miou:.6f}")
    (out_dir / "summary.csv").write_text("\n".join(summary_lines) + "\n")
    plot_stage_miou(mious, out_dir / "summary.png")
    return mious
