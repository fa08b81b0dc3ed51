"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .dataset import ingest_scene
from .errors import ConfigError, DataError, TransportError
from .pipeline import PipelineConfig, emit_manifest, run_eval, run_integrate, \
    run_pipeline, run_prompts, run_refine, run_render
from .synthetic import NoiseModel, TrajectoryConfig, default_room, export_scene, \
    load_scene_spec, sample_trajectory

log = logging.getLogger(__name__)


def _load_config(config_path: str | None, **overrides) -> PipelineConfig:
    if config_path:
        return PipelineConfig.from_toml(config_path, **overrides)
    kwargs = {k: v for k, v in overrides.items() if v is not None}
    return PipelineConfig(**kwargs)


def _common_options(f):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=False),
                     default=None, help="Pipeline config TOML."),
        click.option("--scene", "scene_dir", type=click.Path(), required=True,
                     help="Scene directory."),
        click.option("--out", "out_dir", type=click.Path(), required=True,
                     help="Output directory."),
        click.option("--voxel-size", type=float, default=None),
        click.option("--strategy", type=click.Choice(["grid", "informed", "both"]),
                     default=None),
        click.option("--d", "grid_spacing", type=int, default=None,
                     help="Grid prompt spacing in pixels."),
        click.option("--min-area-pct", type=float, default=None,
                     help="Informed cluster threshold, percent of image area."),
        click.option("--segmenter", type=click.Choice(["oracle", "exchange"]),
                     default=None),
        click.option("--seed", type=int, default=None),
        click.option("--workers", type=int, default=None),
    ]
    for option in reversed(options):
        f = option(f)
    return f


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def cli(verbose: bool):
    """Fuse noisy RGB-D semantic predictions into a volume, render
    multi-view-consistent label maps, and refine them with instance masks."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--scene-spec", type=click.Path(exists=True), default=None,
              help="Scene TOML; defaults to the built-in room.")
@click.option("--frames", type=int, default=60)
@click.option("--seed", type=int, default=0)
@click.option("--noise-p", type=float, default=0.2, help="I.i.d. flip rate.")
@click.option("--tau", type=float, default=0.0,
              help="Partial-view visibility threshold.")
@click.option("--substitute", type=int, default=0,
              help="Class painted over under-observed instances.")
def synth(out_dir, scene_spec, frames, seed, noise_p, tau, substitute):
    """Generate a synthetic scene dataset in the ingestion layout."""
    if scene_spec:
        scene, intr, noise, traj = load_scene_spec(scene_spec)
    else:
        from .geometry import CameraIntrinsics
        scene = default_room()
        intr = CameraIntrinsics(277.13, 277.13, 160.0, 120.0, 320, 240)
        noise = NoiseModel(noise_p, tau, substitute, seed)
        traj = TrajectoryConfig(frames, seed)
    trajectory = sample_trajectory(scene, traj.n_frames, traj.seed)
    export_scene(scene, trajectory, noise, out_dir, intr, traj)
    click.echo(f"wrote {traj.n_frames} frames to {out_dir}")


@cli.command("ingest-check")
@click.option("--scene", "scene_dir", type=click.Path(), required=True)
def ingest_check(scene_dir):
    """Validate a scene directory and report its frame inventory."""
    seq = ingest_scene(scene_dir)
    n_train = len(seq.train_split())
    click.echo(f"{seq.scene_dir}: {len(seq.frames)} frames "
               f"({n_train} train / {len(seq.frames) - n_train} test), "
               f"{seq.dropped_frames} dropped")
    click.echo(f"intrinsics: {seq.intrinsics.width}x{seq.intrinsics.height} "
               f"fx={seq.intrinsics.fx:.2f} fy={seq.intrinsics.fy:.2f}")


@cli.command()
@_common_options
def integrate(config_path, scene_dir, out_dir, **overrides):
    """Fuse train-split frames into a semantic TSDF volume file."""
    config = _load_config(config_path, **overrides)
    seq = ingest_scene(scene_dir, config.train_fraction)
    path = run_integrate(seq, config, out_dir)
    click.echo(f"volume written to {path}")


@cli.command()
@_common_options
def render(config_path, scene_dir, out_dir, **overrides):
    """Render multi-view label maps at every train pose."""
    config = _load_config(config_path, **overrides)
    seq = ingest_scene(scene_dir, config.train_fraction)
    path = run_render(seq, config, out_dir)
    click.echo(f"label maps written to {path}")


@cli.command()
@_common_options
def prompts(config_path, scene_dir, out_dir, **overrides):
    """Write segmenter prompt files for each configured strategy."""
    config = _load_config(config_path, **overrides)
    seq = ingest_scene(scene_dir, config.train_fraction)
    for strategy in config.strategies():
        path = run_prompts(seq, config, out_dir, strategy)
        click.echo(f"{strategy} prompts written to {path}")


@cli.command()
@_common_options
def refine(config_path, scene_dir, out_dir, **overrides):
    """Refine rendered label maps with instance masks."""
    config = _load_config(config_path, **overrides)
    seq = ingest_scene(scene_dir, config.train_fraction)
    for strategy in config.strategies():
        path = run_refine(seq, config, out_dir, strategy)
        click.echo(f"{strategy} refined labels written to {path}")


@cli.command("eval")
@_common_options
@click.option("--pred", "pred_dir", type=click.Path(), default=None,
              help="Directory of predicted label images; defaults to the "
                   "sequence's raw predictions.")
@click.option("--name", default=None, help="Report name; defaults to the "
              "prediction directory name.")
@click.option("--split", type=click.Choice(["train", "test", "all"]),
              default="train")
def eval_cmd(config_path, scene_dir, out_dir, pred_dir, name, split, **overrides):
    """Score label images against ground truth; writes report files."""
    config = _load_config(config_path, **overrides)
    seq = ingest_scene(scene_dir, config.train_fraction)
    if name is None:
        name = Path(pred_dir).name if pred_dir else "pred"
    miou = run_eval(seq, config, pred_dir, out_dir, name, split)
    click.echo(f"{name} ({split}): mIoU = {miou:.4f}")


@cli.command()
@_common_options
def manifest(config_path, scene_dir, out_dir, **overrides):
    """Emit the training manifest for the configured strategies."""
    config = _load_config(config_path, **overrides)
    seq = ingest_scene(scene_dir, config.train_fraction)
    label_dirs = {s: Path(out_dir) / f"labels_ir_{s}" for s in config.strategies()}
    path = emit_manifest(seq, out_dir, config.strategies(), label_dirs)
    click.echo(f"manifest written to {path}")


@cli.command()
@_common_options
def pipeline(config_path, scene_dir, out_dir, **overrides):
    """Run all stages: integrate, render, prompts, refine, eval, manifest."""
    config = _load_config(config_path, **overrides)
    mious = run_pipeline(scene_dir, config, out_dir)
    for stage, miou in mious.items():
        click.echo(f"{stage}: mIoU = {miou:.4f}")


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(130)
    except click.UsageError as e:
        e.show()
        sys.exit(2)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)
    except (DataError, TransportError) as e:
        click.echo(f"data error: {e}", err=True)
        sys.exit(3)


if __name__ == "__main__":
    main()
