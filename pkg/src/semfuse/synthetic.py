"""Deterministic synthetic indoor scenes with exact per-pixel oracles.

Scenes are unions of axis-aligned boxes (room shell plus furniture), so
depth, class and instance maps have closed-form ray intersections. A noise
model manufactures corrupted predictions with the two error structures the
pipeline must survive: i.i.d. label flips and systematic relabeling of
instances that are only partially visible in a frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, Pose
from .labels import IGNORE_ID, LabelMap, ROLE_GROUND_TRUTH, ROLE_MULTIVIEW, ROLE_RAW
from .volume import BLOCK_SIDE, SemanticVolume, argmax_class

NO_INSTANCE = 255


@dataclass(frozen=True)
class Box:
    class_id: int
    instance_id: int
    vmin: tuple[float, float, float]
    vmax: tuple[float, float, float]

    def __post_init__(self):
        if not all(a < b for a, b in zip(self.vmin, self.vmax)):
            raise ValueError(f"degenerate box {self.vmin} .. {self.vmax}")


@dataclass(frozen=True)
class Scene:
    boxes: tuple[Box, ...]

    def __post_init__(self):
        ids = [b.instance_id for b in self.boxes]
        if len(set(ids)) != len(ids):
            raise ValueError("instance ids must be unique")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.min([b.vmin for b in self.boxes], axis=0)
        hi = np.max([b.vmax for b in self.boxes], axis=0)
        return lo, hi

    def class_of_instance(self, instance_id: int) -> int:
        for b in self.boxes:
            if b.instance_id == instance_id:
                return b.class_id
        raise KeyError(instance_id)


@dataclass(frozen=True)
class NoiseModel:
    """Prediction corruption: partial-view relabeling, then i.i.d. flips."""

    p: float = 0.0
    tau: float = 0.0
    substitute: int = 0  # wall
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"flip rate p must be in [0, 1], got {self.p}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"visibility threshold tau must be in [0, 1], got {self.tau}")


@dataclass(frozen=True)
class TrajectoryConfig:
    n_frames: int = 60
    seed: int = 0


def default_room(with_objects: bool = True) -> Scene:
    """6 x 5 x 2.7 m room shell plus a cabinet and a sofa against the walls."""
    t = 0.3  # shell thickness, comfortably wider than the truncation band
    boxes = [
        Box(1, 1, (-t, -t, -t), (6 + t, 5 + t, 0.0)),        # floor
        Box(21, 2, (-t, -t, 2.7), (6 + t, 5 + t, 2.7 + t)),  # ceiling
        Box(0, 3, (-t, -t, 0.0), (0.0, 5 + t, 2.7)),         # wall x-
        Box(0, 4, (6.0, -t, 0.0), (6 + t, 5 + t, 2.7)),      # wall x+
        Box(0, 5, (-t, -t, 0.0), (6 + t, 0.0, 2.7)),         # wall y-
        Box(0, 6, (-t, 5.0, 0.0), (6 + t, 5 + t, 2.7)),      # wall y+
    ]
    if with_objects:
        boxes.append(Box(2, 7, (0.4, 4.3, 0.0), (1.6, 5.0, 1.5)))   # cabinet
        boxes.append(Box(5, 8, (3.4, 0.0, 0.0), (5.2, 0.9, 0.8)))   # sofa
    return Scene(tuple(boxes))


# -- exact renders -------------------------------------------------------------


def _ray_box_hits(origin: np.ndarray, dirs: np.ndarray,
                  vmin, vmax) -> np.ndarray:
    """Slab-test parameter of the nearest surface per ray; inf on miss.

    dirs need not be normalized; the returned t is in units of dirs.
    """
    eps = 1e-12
    t_near = np.full(dirs.shape[0], -np.inf)
    t_far = np.full(dirs.shape[0], np.inf)
    for k in range(3):
        d = dirs[:, k]
        zero = d == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (vmin[k] - origin[k]) / d
            t2 = (vmax[k] - origin[k]) / d
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        inside = (origin[k] >= vmin[k]) & (origin[k] <= vmax[k])
        lo = np.where(zero, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(zero, np.where(inside, np.inf, -np.inf), hi)
        t_near = np.maximum(t_near, lo)
        t_far = np.minimum(t_far, hi)
    hit = (t_near <= t_far) & (t_far > eps)
    t = np.where(t_near > eps, t_near, t_far)
    return np.where(hit, t, np.inf)


def render_oracle(scene: Scene, pose: Pose, intr: CameraIntrinsics,
                  max_range: float = np.inf
                  ) -> tuple[np.ndarray, LabelMap, np.ndarray]:
    """Exact depth, class and instance maps from closed-form intersections.

    Returns (depth float32 z-meters with 0 = no hit, ground-truth LabelMap,
    instance map uint8 with 255 = no instance).
    """
    h, w = intr.height, intr.width
    dirs = intr.pixel_rays().reshape(-1, 3) @ pose.rotation.T
    origin = pose.translation
    best_t = np.full(h * w, np.inf)
    best_box = np.full(h * w, -1, dtype=np.int32)
    for i, box in enumerate(scene.boxes):
        t = _ray_box_hits(origin, dirs, box.vmin, box.vmax)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_box = np.where(closer, i, best_box)

    # pixel_rays has z=1 in the camera frame, so t is the z-depth directly
    hit = np.isfinite(best_t) & (best_t <= max_range)
    depth = np.where(hit, best_t, 0.0).astype(np.float32)
    classes = np.array([b.class_id for b in scene.boxes], dtype=np.uint8)
    instances = np.array([b.instance_id for b in scene.boxes], dtype=np.uint8)
    gt = np.full(h * w, IGNORE_ID, dtype=np.uint8)
    inst = np.full(h * w, NO_INSTANCE, dtype=np.uint8)
    gt[hit] = classes[best_box[hit]]
    inst[hit] = instances[best_box[hit]]
    return (depth.reshape(h, w),
            LabelMap(gt.reshape(h, w), ROLE_GROUND_TRUTH),
            inst.reshape(h, w))


def render_depth_marching(scene: Scene, pose: Pose, intr: CameraIntrinsics,
                          step: float = 0.002, max_range: float = 12.0) -> np.ndarray:
    """Second depth oracle: fixed-step inside-any-box test, bisected at the
    first entering sample. Slow; used only to cross-check render_oracle."""
    h, w = intr.height, intr.width
    rays = intr.pixel_rays().reshape(-1, 3)
    norms = np.linalg.norm(rays, axis=1)
    dirs = (rays / norms[:, None]) @ pose.rotation.T
    origin = pose.translation

    def inside_any(pts: np.ndarray) -> np.ndarray:
        res = np.zeros(pts.shape[0], dtype=bool)
        for b in scene.boxes:
            res |= ((pts >= b.vmin) & (pts <= b.vmax)).all(axis=1)
        return res

    n = dirs.shape[0]
    depth = np.zeros(n, dtype=np.float64)
    t = np.zeros(n)
    alive = np.flatnonzero(~inside_any(origin + dirs * 0.0))
    while alive.size:
        t[alive] += step
        expired = t[alive] > max_range
        alive = alive[~expired]
        if not alive.size:
            break
        pts = origin + dirs[alive] * t[alive][:, None]
        entered = inside_any(pts)
        if entered.any():
            rows = alive[entered]
            lo = t[rows] - step
            hi = t[rows]
            for _ in range(40):  # bisection to ~1e-14 of a 2 mm bracket
                mid = 0.5 * (lo + hi)
                m_in = inside_any(origin + dirs[rows] * mid[:, None])
                hi = np.where(m_in, mid, hi)
                lo = np.where(m_in, lo, mid)
            depth[rows] = hi * (1.0 / norms[rows])  # ray param -> z-depth
            alive = alive[~entered]
    return depth.reshape(h, w).astype(np.float32)


# -- brute-force raycast oracle over a fused volume ----------------------------


def _dense_lookup(volume: SemanticVolume):
    """Dense tsdf/weighted/class arrays straight from the block hash."""
    bounds = volume.voxel_bounds()
    if bounds is None:
        return None
    lo, hi = bounds
    shape = tuple((hi - lo).astype(int))
    tsdf = np.zeros(shape, dtype=np.float32)
    weighted = np.zeros(shape, dtype=bool)
    klass = np.full(shape, IGNORE_ID, dtype=np.uint8)
    side = BLOCK_SIDE
    for (bx, by, bz), blk in volume.blocks.items():
        sl = (slice(bx * side - lo[0], bx * side - lo[0] + side),
              slice(by * side - lo[1], by * side - lo[1] + side),
              slice(bz * side - lo[2], bz * side - lo[2] + side))
        tsdf[sl] = blk.tsdf.reshape(side, side, side)
        weighted[sl] = (blk.weight > 0).reshape(side, side, side)
        if blk.hist is not None:
            cls = np.argmax(blk.hist, axis=1).astype(np.uint8)
            cls[blk.hist.sum(axis=1) == 0] = IGNORE_ID
            klass[sl] = cls.reshape(side, side, side)
    return lo, np.array(shape, dtype=np.int64), tsdf, weighted, klass


def raycast_fixed_step(volume: SemanticVolume, origin: np.ndarray,
                       direction: np.ndarray, max_range: float = 8.0,
                       step_divisor: int = 8) -> tuple[float, int] | None:
    """Brute-force zero-crossing search by sampling every voxel_size/8 along
    the ray. Returns (t_hit, class_id) or None; independent of the DDA path.
    """
    direction = np.asarray(direction, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    vs = volume.voxel_size
    step = vs / step_divisor
    prev_val = 0.0
    prev_ok = False
    prev_t = 0.0
    prev_cls = IGNORE_ID
    n_steps = int(math.ceil(max_range / step))
    for k in range(n_steps + 1):
        t = k * step
        vox = volume.get_voxel(volume.voxel_index_of(origin + direction * t))
        ok = vox is not None and vox.weight > 0
        val = vox.tsdf if ok else 0.0
        cls = argmax_class(vox.histogram) if ok else IGNORE_ID
        if ok and prev_ok and prev_val > 0 and val <= 0:
            t_hit = prev_t + (t - prev_t) * prev_val / (prev_val - val)
            if t_hit > max_range:
                return None
            # class from the vote-carrying side of the crossing pair
            return (t_hit, cls if cls != IGNORE_ID else prev_cls)
        prev_ok, prev_val, prev_t, prev_cls = ok, val, t, cls
    return None


def render_fixed_step(volume: SemanticVolume, pose: Pose, intr: CameraIntrinsics,
                      max_range: float = 8.0, step_divisor: int = 8
                      ) -> tuple[LabelMap, np.ndarray]:
    """Vectorized raycast_fixed_step over all pixels (label map + z-depth)."""
    h, w = intr.height, intr.width
    out_cls = np.full(h * w, IGNORE_ID, dtype=np.uint8)
    out_depth = np.zeros(h * w, dtype=np.float32)
    dense = _dense_lookup(volume)
    if dense is None:
        return LabelMap(out_cls.reshape(h, w), ROLE_MULTIVIEW), out_depth.reshape(h, w)
    lo, shape, tsdf, weighted, klass = dense
    strides = np.array([shape[1] * shape[2], shape[2], 1], dtype=np.int64)
    flat_tsdf = tsdf.reshape(-1)
    flat_weighted = weighted.reshape(-1)
    flat_klass = klass.reshape(-1)

    rays = intr.pixel_rays().reshape(-1, 3)
    inv_norm = 1.0 / np.linalg.norm(rays, axis=1)
    dirs = (rays * inv_norm[:, None]) @ pose.rotation.T
    origin = pose.translation
    vs = volume.voxel_size
    step = vs / step_divisor

    def sample(rows: np.ndarray, t: float):
        pts = origin + dirs[rows] * t
        rel = np.floor(pts / vs).astype(np.int64) - lo
        inside = ((rel >= 0) & (rel < shape)).all(axis=1)
        flat = np.where(inside, rel @ strides, 0)
        ok = inside & flat_weighted[flat]
        val = np.where(ok, flat_tsdf[flat].astype(np.float64), 0.0)
        return ok, val, flat

    n = dirs.shape[0]
    alive = np.arange(n)
    prev_ok = np.zeros(n, dtype=bool)
    prev_val = np.zeros(n)
    prev_t = np.zeros(n)
    prev_cls = np.full(n, IGNORE_ID, dtype=np.uint8)
    n_steps = int(math.ceil(max_range / step))
    for k in range(n_steps + 1):
        t = k * step
        ok, val, flat = sample(alive, t)
        cur_cls = flat_klass[flat]
        crossing = prev_ok[alive] & ok & (prev_val[alive] > 0) & (val <= 0)
        if crossing.any():
            rows = alive[crossing]
            pv = prev_val[rows]
            pt = prev_t[rows]
            t_hit = pt + (t - pt) * pv / (pv - val[crossing])
            keep = t_hit <= max_range
            hrows = rows[keep]
            if hrows.size:
                cls = cur_cls[crossing][keep]
                out_cls[hrows] = np.where(cls != IGNORE_ID, cls, prev_cls[hrows])
                out_depth[hrows] = (t_hit[keep] * inv_norm[hrows]).astype(np.float32)
        prev_ok[alive] = ok
        prev_val[alive] = val
        prev_t[alive] = t
        prev_cls[alive] = cur_cls
        if crossing.any():
            alive = alive[~crossing]
            if not alive.size:
                break
    return LabelMap(out_cls.reshape(h, w), ROLE_MULTIVIEW), out_depth.reshape(h, w)


# -- prediction corruption ------------------------------------------------------


def instance_areas(inst: np.ndarray) -> dict[int, int]:
    """Visible pixel count per instance id in one frame."""
    ids, counts = np.unique(inst[inst != NO_INSTANCE], return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts)}


def corrupt_labels(gt: LabelMap, inst: np.ndarray, noise: NoiseModel,
                   max_areas: dict[int, int] | None = None,
                   frame_index: int = 0, num_classes: int = 40) -> LabelMap:
    """Manufacture a noisy prediction from ground truth.

    First the partial-view rule: every instance whose visible area in this
    frame is under tau times its trajectory-wide maximum is wholly relabeled
    to the substitute class. Then i.i.d. flips with probability p move pixels
    to a uniformly random other class. Deterministic in (noise.seed, frame).
    """
    pred = gt.data.copy()
    if noise.tau > 0 and max_areas:
        areas = instance_areas(inst)
        for iid, area in areas.items():
            ref = max_areas.get(iid, area)
            if area < noise.tau * ref:
                pred[inst == iid] = noise.substitute
    if noise.p > 0:
        rng = np.random.default_rng([noise.seed, frame_index])
        roll = rng.random(pred.shape)
        offset = rng.integers(1, num_classes, size=pred.shape, dtype=np.int64)
        flip = (roll < noise.p) & (pred != IGNORE_ID)
        pred = np.where(flip, (pred.astype(np.int64) + offset) % num_classes,
                        pred).astype(np.uint8)
    return LabelMap(pred, ROLE_RAW)


# -- trajectories ---------------------------------------------------------------


def _pose_from_yaw_pitch(position: np.ndarray, yaw: float, pitch: float) -> Pose:
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    forward = np.array([cp * cy, cp * sy, sp])
    right = np.array([sy, -cy, 0.0])
    down = np.cross(forward, right)
    return Pose(np.column_stack([right, down, forward]), position)


def sample_trajectory(scene: Scene, n_frames: int, seed: int = 0) -> list[Pose]:
    """Smooth wandering path: piecewise-linear positions and yaw between
    seeded waypoints, with the camera pitched slightly down toward the room.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    lo, hi = scene.bounds()
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    rng = np.random.default_rng(seed)
    n_way = max(2, n_frames // 12 + 2)
    way_pos = center + (rng.random((n_way, 3)) - 0.5) * np.array(
        [half[0] * 0.9, half[1] * 0.9, 0.0])
    way_pos[:, 2] = 1.4
    # Yaw wanders the full circle so every wall gets observed.
    way_yaw = np.cumsum(rng.uniform(0.6, 1.7, n_way)) + rng.uniform(0, 2 * math.pi)
    way_pitch = rng.uniform(-0.45, -0.15, n_way)

    poses = []
    for i in range(n_frames):
        s = (i / (n_frames - 1)) * (n_way - 1) if n_frames > 1 else 0.0
        j = min(int(s), n_way - 2)
        f = s - j
        pos = way_pos[j] * (1 - f) + way_pos[j + 1] * f
        yaw = way_yaw[j] * (1 - f) + way_yaw[j + 1] * f
        pitch = way_pitch[j] * (1 - f) + way_pitch[j + 1] * f
        poses.append(_pose_from_yaw_pitch(pos, float(yaw), float(pitch)))
    return poses


# -- scene spec files -----------------------------------------------------------

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml


def load_scene_spec(path: str | Path):
    """Read a scene TOML: boxes, camera intrinsics, noise, trajectory."""
    with open(path, "rb") as f:
        doc = _toml.load(f)
    boxes = tuple(
        Box(int(b["class"]), int(b["instance"]), tuple(b["min"]), tuple(b["max"]))
        for b in doc.get("box", [])
    )
    cam = doc["camera"]
    intr = CameraIntrinsics(cam["fx"], cam["fy"], cam["cx"], cam["cy"],
                            int(cam["width"]), int(cam["height"]))
    nz = doc.get("noise", {})
    noise = NoiseModel(nz.get("p", 0.0), nz.get("tau", 0.0),
                       int(nz.get("substitute", 0)), int(nz.get("seed", 0)))
    tr = doc.get("trajectory", {})
    traj = TrajectoryConfig(int(tr.get("n_frames", 60)), int(tr.get("seed", 0)))
    return Scene(boxes), intr, noise, traj


def instance_color(instance_id: int) -> tuple[int, int, int]:
    """Deterministic flat color per instance; background stays black."""
    if instance_id == NO_INSTANCE:
        return (0, 0, 0)
    n = instance_id + 1
    return ((37 * n + 96) % 256, (91 * n + 53) % 256, (151 * n + 20) % 256)


def export_scene(scene: Scene, trajectory: list[Pose], noise: NoiseModel,
                 out_dir: str | Path, intr: CameraIntrinsics,
                 traj_cfg: TrajectoryConfig | None = None,
                 num_classes: int = 40) -> Path:
    """Write the scene as a dataset in the pipeline's ingestion layout.

    Two passes: first render every frame to learn each instance's maximum
    visible area (the partial-view rule needs it), then corrupt and write.
    """
    from .dataset import write_color_png, write_depth_png, write_label_png
    from .geometry import save_intrinsics, save_pose

    if not trajectory:
        raise ValueError("trajectory must contain at least one pose")
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    save_intrinsics(intr, out_dir / "intrinsics.txt")
    save_scene_spec(scene, intr, noise,
                    traj_cfg or TrajectoryConfig(len(trajectory), 0),
                    out_dir / "scene.toml")

    renders = [render_oracle(scene, pose, intr) for pose in trajectory]
    max_areas: dict[int, int] = {}
    for _, _, inst in renders:
        for iid, area in instance_areas(inst).items():
            max_areas[iid] = max(max_areas.get(iid, 0), area)

    palette = np.array([instance_color(i) for i in range(256)], dtype=np.uint8)
    for n, (pose, (depth, gt, inst)) in enumerate(zip(trajectory, renders)):
        pred = corrupt_labels(gt, inst, noise, max_areas, frame_index=n,
                              num_classes=num_classes)
        stem = frames_dir / f"{n:06d}"
        write_depth_png(depth, f"{stem}.depth.png")
        save_pose(pose, f"{stem}.pose.txt")
        write_label_png(pred.data, f"{stem}.pred.png")
        write_label_png(gt.data, f"{stem}.gt.png")
        write_label_png(inst, f"{stem}.inst.png")
        write_color_png(palette[inst], f"{stem}.color.png")
    return out_dir


def save_scene_spec(scene: Scene, intr: CameraIntrinsics, noise: NoiseModel,
                    traj: TrajectoryConfig, path: str | Path) -> None:
    lines = [
        "[camera]",
        f"fx = {intr.fx}",
        f"fy = {intr.fy}",
        f"cx = {intr.cx}",
        f"cy = {intr.cy}",
        f"width = {intr.width}",
        f"height = {intr.height}",
        "",
        "[noise]",
        f"p = {noise.p}",
        f"tau = {noise.tau}",
        f"substitute = {noise.substitute}",
        f"seed = {noise.seed}",
        "",
        "[trajectory]",
        f"n_frames = {traj.n_frames}",
        f"seed = {traj.seed}",
    ]
    for b in scene.boxes:
        lines += [
            "",
            "[[box]]",
            f"class = {b.class_id}",
            f"instance = {b.instance_id}",
            f"min = [{b.vmin[0]}, {b.vmin[1]}, {b.vmin[2]}]",
            f"max = [{b.vmax[0]}, {b.vmax[1]}, {b.vmax[2]}]",
        ]
    Path(path).write_text("\n".join(lines) + "\n")
