"""Ingestion, stage isolation, manifests, and the CLI surface."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from semfuse.cli import cli
from semfuse.dataset import ingest_scene, load_frame
from semfuse.errors import ConfigError, DataError
from semfuse.geometry import CameraIntrinsics
from semfuse.pipeline import PipelineConfig, emit_manifest, run_eval, \
    run_integrate, run_prompts, run_refine, run_render
from semfuse.segmenter import read_mask_request
from semfuse.synthetic import NoiseModel, TrajectoryConfig, default_room, \
    export_scene, sample_trajectory


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe") / "scene"
    scene = default_room()
    intr = CameraIntrinsics(70.0, 70.0, 40.0, 30.0, 80, 60)
    poses = sample_trajectory(scene, 15, seed=3)
    export_scene(scene, poses, NoiseModel(p=0.15, tau=0.0, seed=5), out, intr,
                 TrajectoryConfig(15, 3))
    return out


@pytest.fixture()
def config():
    return PipelineConfig(voxel_size=0.05, strategy="both", segmenter="oracle")


class TestIngest:
    def test_round_trip_inventory(self, scene_dir):
        seq = ingest_scene(scene_dir)
        assert len(seq.frames) == 15
        assert len(seq.train_split()) == 12
        assert len(seq.test_split()) == 3
        assert seq.dropped_frames == 0
        frame = load_frame(seq, seq.frames[0])
        assert frame.prediction is not None
        assert frame.ground_truth is not None

    def test_empty_directory_is_hard_error(self, tmp_path):
        with pytest.raises(DataError):
            ingest_scene(tmp_path)

    def test_missing_intrinsics_is_hard_error(self, tmp_path):
        (tmp_path / "frames").mkdir()
        with pytest.raises(DataError, match="intrinsics"):
            ingest_scene(tmp_path)

    def test_frame_without_pose_is_dropped_and_counted(self, scene_dir, tmp_path):
        import shutil
        clone = tmp_path / "scene"
        shutil.copytree(scene_dir, clone)
        (clone / "frames" / "000003.pose.txt").unlink()
        seq = ingest_scene(clone)
        assert len(seq.frames) == 14
        assert seq.dropped_frames == 1
        assert all(f.index != 3 for f in seq.frames)

    def test_unreadable_depth_is_dropped_and_counted(self, scene_dir, tmp_path):
        import shutil
        clone = tmp_path / "scene"
        shutil.copytree(scene_dir, clone)
        (clone / "frames" / "000002.depth.png").write_bytes(b"not a png")
        seq = ingest_scene(clone)
        assert len(seq.frames) == 14
        assert seq.dropped_frames == 1


class TestStages:
    def test_stage_isolation_and_rerun(self, scene_dir, config, tmp_path):
        seq = ingest_scene(scene_dir)
        out = tmp_path / "out"
        vol_path = run_integrate(seq, config, out)
        first = vol_path.read_bytes()
        run_render(seq, config, out)
        mc_bytes = {p.name: p.read_bytes() for p in (out / "labels_mc").iterdir()}
        # deleting later stages and re-running reproduces them exactly
        for p in (out / "labels_mc").iterdir():
            p.unlink()
        run_render(seq, config, out)
        again = {p.name: p.read_bytes() for p in (out / "labels_mc").iterdir()}
        assert again == mc_bytes
        assert run_integrate(seq, config, out).read_bytes() == first

    def test_integrate_stats_sidecar(self, scene_dir, config, tmp_path):
        seq = ingest_scene(scene_dir)
        run_integrate(seq, config, tmp_path)
        stats = json.loads((tmp_path / "integrate_stats.json").read_text())
        assert stats["frames"] == 12
        # every valid-depth pixel with a real class contributes one count
        from semfuse.volume import load_volume
        from semfuse.labels import IGNORE_ID
        expected = 0
        for record in seq.train_split():
            frame = load_frame(seq, record)
            valid = (frame.depth > 0) & (frame.depth <= config.max_range)
            expected += int((valid & (frame.prediction.data != IGNORE_ID)).sum())
        assert stats["semantic_points"] == expected
        assert load_volume(tmp_path / "volume.svol").total_histogram_count() == expected

    def test_prompts_stage_writes_exchange_files(self, scene_dir, config, tmp_path):
        seq = ingest_scene(scene_dir)
        run_integrate(seq, config, tmp_path)
        run_render(seq, config, tmp_path)
        exchange = run_prompts(seq, config, tmp_path, "grid")
        files = sorted(exchange.glob("*.prompts.json"))
        assert len(files) == 12
        request = read_mask_request(files[0])
        assert request.width == 80 and request.height == 60
        assert (exchange / request.image).resolve().exists()

    def test_refine_produces_full_split(self, scene_dir, config, tmp_path):
        seq = ingest_scene(scene_dir)
        run_integrate(seq, config, tmp_path)
        run_render(seq, config, tmp_path)
        refined = run_refine(seq, config, tmp_path, "grid")
        assert len(list(refined.glob("*.png"))) == 12

    def test_workers_do_not_change_outputs(self, scene_dir, tmp_path):
        seq = ingest_scene(scene_dir)
        base = PipelineConfig(voxel_size=0.05, strategy="grid", segmenter="oracle")
        par = PipelineConfig(voxel_size=0.05, strategy="grid", segmenter="oracle",
                             workers=4)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run_integrate(seq, base, out_a)
        run_integrate(seq, par, out_b)
        run_render(seq, base, out_a)
        run_render(seq, par, out_b)
        for p in (out_a / "labels_mc").iterdir():
            assert (out_b / "labels_mc" / p.name).read_bytes() == p.read_bytes()

    def test_eval_without_gt_errors(self, scene_dir, config, tmp_path):
        import shutil
        clone = tmp_path / "scene"
        shutil.copytree(scene_dir, clone)
        for p in clone.glob("frames/*.gt.png"):
            p.unlink()
        seq = ingest_scene(clone)
        with pytest.raises(DataError):
            run_eval(seq, config, None, tmp_path / "out", "pred")


class TestManifest:
    def test_single_strategy_one_record_per_frame(self, scene_dir, config, tmp_path):
        seq = ingest_scene(scene_dir)
        run_integrate(seq, config, tmp_path)
        run_render(seq, config, tmp_path)
        label_dir = run_refine(seq, config, tmp_path, "grid")
        path = emit_manifest(seq, tmp_path, ("grid",), {"grid": label_dir})
        doc = json.loads(path.read_text())
        assert len(doc["records"]) == 12
        # paths resolve relative to the manifest's directory
        assert all((path.parent / r["image"]).exists()
                   and (path.parent / r["label"]).exists()
                   for r in doc["records"])
        assert all(not Path(r["label"]).is_absolute() for r in doc["records"])

    def test_combined_lists_each_image_twice(self, scene_dir, config, tmp_path):
        seq = ingest_scene(scene_dir)
        run_integrate(seq, config, tmp_path)
        run_render(seq, config, tmp_path)
        dirs = {s: run_refine(seq, config, tmp_path, s)
                for s in ("grid", "informed")}
        path = emit_manifest(seq, tmp_path, ("grid", "informed"), dirs)
        doc = json.loads(path.read_text())
        assert len(doc["records"]) == 24
        by_image = {}
        for r in doc["records"]:
            by_image.setdefault(r["image"], []).append(r["strategy"])
        assert all(sorted(v) == ["grid", "informed"] for v in by_image.values())
        assert "halve" in doc["epoch_weighting"]

    def test_missing_labels_rejected(self, scene_dir, tmp_path):
        seq = ingest_scene(scene_dir)
        with pytest.raises(DataError):
            emit_manifest(seq, tmp_path, ("grid",), {"grid": tmp_path / "nope"})


class TestConfig:
    def test_toml_round_trip(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text('voxel_size = 0.03\nstrategy = "grid"\nworkers = 2\n')
        config = PipelineConfig.from_toml(path)
        assert config.voxel_size == 0.03
        assert config.strategy == "grid"
        assert config.workers == 2

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text("frobnicate = 1\n")
        with pytest.raises(ConfigError):
            PipelineConfig.from_toml(path)

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text("voxel_size = 0.03\n")
        config = PipelineConfig.from_toml(path, voxel_size=0.05)
        assert config.voxel_size == 0.05

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError):
            PipelineConfig(voxel_size=-1)
        with pytest.raises(ConfigError):
            PipelineConfig(strategy="fancy")
        with pytest.raises(ConfigError):
            PipelineConfig(segmenter="magic")


class TestCli:
    def test_synth_then_pipeline(self, tmp_path):
        runner = CliRunner()
        scene = tmp_path / "scene"
        spec = tmp_path / "spec.toml"
        from semfuse.synthetic import save_scene_spec
        save_scene_spec(default_room(),
                        CameraIntrinsics(70.0, 70.0, 40.0, 30.0, 80, 60),
                        NoiseModel(p=0.1, seed=1), TrajectoryConfig(10, 2), spec)
        result = runner.invoke(cli, ["synth", "--out", str(scene),
                                     "--scene-spec", str(spec)])
        assert result.exit_code == 0, result.output
        result = runner.invoke(cli, ["ingest-check", "--scene", str(scene)])
        assert result.exit_code == 0
        assert "10 frames" in result.output
        out = tmp_path / "out"
        result = runner.invoke(cli, [
            "pipeline", "--scene", str(scene), "--out", str(out),
            "--strategy", "informed", "--segmenter", "oracle"])
        assert result.exit_code == 0, result.output
        assert (out / "labels_mc").is_dir()
        assert (out / "labels_ir_informed").is_dir()
        assert (out / "summary.csv").exists()
        assert (out / "summary.png").exists()
        assert (out / "manifest_informed.json").exists()
        assert "mIoU" in result.output

    def test_exit_code_2_on_config_error(self, tmp_path):
        import subprocess, sys
        bad = tmp_path / "bad.toml"
        bad.write_text("voxel_size = -3\n")
        proc = subprocess.run(
            [sys.executable, "-m", "semfuse.cli", "integrate",
             "--config", str(bad), "--scene", str(tmp_path), "--out",
             str(tmp_path / "o")],
            capture_output=True, text=True)
        assert proc.returncode == 2, proc.stderr

    def test_exit_code_3_on_data_error(self, tmp_path):
        import subprocess, sys
        empty = tmp_path / "empty"
        empty.mkdir()
        proc = subprocess.run(
            [sys.executable, "-m", "semfuse.cli", "integrate",
             "--scene", str(empty), "--out", str(tmp_path / "o")],
            capture_output=True, text=True)
        assert proc.returncode == 3, proc.stderr
