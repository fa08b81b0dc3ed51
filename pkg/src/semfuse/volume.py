"""Sparse TSDF volume with per-voxel class histograms.

Geometry is a truncated signed distance field stored in 8x8x8 voxel blocks,
hashed by block index; semantics are per-voxel histograms of observed class
ids. Frames are integrated along pixel rays; label maps are rendered by
finding the first positive-to-negative TSDF zero crossing per pixel ray and
reading the hit voxel's majority class.

The voxel grid is anchored at the world origin: voxel (i, j, k) spans
[i*s, (i+1)*s) x ... with center (i + 0.5) * s.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import CameraIntrinsics, Pose
from .labels import IGNORE_ID, LabelMap, ROLE_MULTIVIEW

BLOCK_SIDE = 8
BLOCK_VOXELS = BLOCK_SIDE ** 3

DEFAULT_MAX_WEIGHT = 10000.0
DEFAULT_MAX_RANGE = 8.0

# Block indices are packed into one int64 key for vectorized grouping.
_KEY_OFF = 1 << 15
_KEY_BASE = 1 << 16

_MAGIC = b"SVOL"
_VERSION = 1


@dataclass
class SemanticVoxel:
    """Snapshot of a single voxel: signed distance, weight, class counts."""

    tsdf: float
    weight: float
    histogram: np.ndarray  # (num_classes,) uint32


def tsdf_update(voxel: SemanticVoxel, sdf_sample: float, w: float,
                truncation: float, max_weight: float = DEFAULT_MAX_WEIGHT) -> SemanticVoxel:
    """Running-average TSDF update with truncation clamp and weight cap."""
    if w <= 0:
        raise ValueError(f"observation weight must be positive, got {w}")
    clamped = min(max(sdf_sample, -truncation), truncation)
    new_tsdf = (voxel.tsdf * voxel.weight + clamped * w) / (voxel.weight + w)
    new_weight = min(voxel.weight + w, max_weight)
    return SemanticVoxel(new_tsdf, new_weight, voxel.histogram.copy())


def semantic_update(voxel: SemanticVoxel, class_id: int) -> SemanticVoxel:
    """Count one observation of class_id at this voxel."""
    if class_id == IGNORE_ID:
        raise ValueError("ignore pixels must be filtered before semantic updates")
    if not 0 <= class_id < voxel.histogram.shape[0]:
        raise ValueError(f"class id {class_id} outside [0, {voxel.histogram.shape[0]})")
    hist = voxel.histogram.copy()
    hist[class_id] += 1
    return SemanticVoxel(voxel.tsdf, voxel.weight, hist)


def argmax_class(histogram: np.ndarray) -> int:
    """Majority class of a histogram; ties go to the lowest id, empty to ignore."""
    if histogram.sum() == 0:
        return IGNORE_ID
    return int(np.argmax(histogram))


@dataclass
class Frame:
    """One localized RGB-D observation with its per-pixel class prediction."""

    index: int
    depth: np.ndarray  # (H, W) float32 meters, 0 = invalid
    prediction: LabelMap | None
    pose: Pose  # camera-to-world
    rgb_path: str | None = None
    ground_truth: LabelMap | None = None


@dataclass
class IntegrationStats:
    voxels_updated: int = 0
    points_integrated: int = 0
    semantic_points: int = 0

    def merged(self, other: "IntegrationStats") -> "IntegrationStats":
        return IntegrationStats(
            self.voxels_updated + other.voxels_updated,
            self.points_integrated + other.points_integrated,
            self.semantic_points + other.semantic_points,
        )


class _Block:
    __slots__ = ("tsdf", "weight", "hist")

    def __init__(self, num_classes: int):
        self.tsdf = np.zeros(BLOCK_VOXELS, dtype=np.float32)
        self.weight = np.zeros(BLOCK_VOXELS, dtype=np.float32)
        self.hist: np.ndarray | None = None  # lazily (BLOCK_VOXELS, C) uint32

    def ensure_hist(self, num_classes: int) -> np.ndarray:
        if self.hist is None:
            self.hist = np.zeros((BLOCK_VOXELS, num_classes), dtype=np.uint32)
        return self.hist


def _pack_block_keys(block_idx: np.ndarray) -> np.ndarray:
    """(N, 3) block indices to int64 keys; bounded to +-2^15 blocks."""
    shifted = block_idx.astype(np.int64) + _KEY_OFF
    if shifted.min() < 0 or shifted.max() >= _KEY_BASE:
        raise ValueError("block index out of supported range (+-32767 blocks)")
    return (shifted[:, 0] * _KEY_BASE + shifted[:, 1]) * _KEY_BASE + shifted[:, 2]


def _unpack_block_key(key: int) -> tuple[int, int, int]:
    z = key % _KEY_BASE
    key //= _KEY_BASE
    y = key % _KEY_BASE
    x = key // _KEY_BASE
    return (int(x - _KEY_OFF), int(y - _KEY_OFF), int(z - _KEY_OFF))


class SemanticVolume:
    """Block-hashed TSDF grid carrying per-voxel class-count histograms."""

    def __init__(self, voxel_size: float, truncation: float | None = None,
                 num_classes: int = 40, max_weight: float = DEFAULT_MAX_WEIGHT):
        if voxel_size <= 0:
            raise ValueError(f"voxel_size must be positive, got {voxel_size}")
        truncation = 2.0 * voxel_size if truncation is None else truncation
        if truncation < voxel_size:
            raise ValueError(f"truncation {truncation} smaller than voxel size {voxel_size}")
        self.voxel_size = float(voxel_size)
        self.truncation = float(truncation)
        self.num_classes = int(num_classes)
        self.max_weight = float(max_weight)
        self.blocks: dict[tuple[int, int, int], _Block] = {}

    # -- basic queries ------------------------------------------------------

    def voxel_index_of(self, point: np.ndarray) -> tuple[int, int, int]:
        idx = np.floor(np.asarray(point) / self.voxel_size).astype(np.int64)
        return (int(idx[0]), int(idx[1]), int(idx[2]))

    @staticmethod
    def _split(index: tuple[int, int, int]) -> tuple[tuple[int, int, int], int]:
        bx, by, bz = (c >> 3 for c in index)
        lx, ly, lz = (c & 7 for c in index)
        return (bx, by, bz), (lx * BLOCK_SIDE + ly) * BLOCK_SIDE + lz

    def get_voxel(self, index: tuple[int, int, int]) -> SemanticVoxel | None:
        """Snapshot of the voxel at a global grid index, or None if unallocated."""
        key, lin = self._split(index)
        blk = self.blocks.get(key)
        if blk is None:
            return None
        hist = (blk.hist[lin].copy() if blk.hist is not None
                else np.zeros(self.num_classes, dtype=np.uint32))
        return SemanticVoxel(float(blk.tsdf[lin]), float(blk.weight[lin]), hist)

    def is_empty(self) -> bool:
        return not self.blocks

    def allocated_voxel_count(self) -> int:
        return sum(int((blk.weight > 0).sum()) for blk in self.blocks.values())

    def total_histogram_count(self) -> int:
        return sum(int(blk.hist.sum()) for blk in self.blocks.values()
                   if blk.hist is not None)

    def voxel_bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Inclusive-exclusive AABB of allocated blocks, in voxel indices."""
        if not self.blocks:
            return None
        keys = np.array(list(self.blocks.keys()), dtype=np.int64)
        lo = keys.min(axis=0) * BLOCK_SIDE
        hi = (keys.max(axis=0) + 1) * BLOCK_SIDE
        return lo, hi

    def prune(self) -> int:
        """Drop blocks that hold no observations at all; returns count removed."""
        dead = [k for k, b in self.blocks.items()
                if not b.weight.any() and (b.hist is None or not b.hist.any())]
        for k in dead:
            del self.blocks[k]
        return len(dead)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SemanticVolume):
            return NotImplemented
        if (self.voxel_size, self.truncation, self.num_classes) != \
           (other.voxel_size, other.truncation, other.num_classes):
            return False
        if set(self.blocks) != set(other.blocks):
            return False
        empty = np.zeros((BLOCK_VOXELS, self.num_classes), dtype=np.uint32)
        for key, a in self.blocks.items():
            b = other.blocks[key]
            if not np.array_equal(a.tsdf, b.tsdf) or not np.array_equal(a.weight, b.weight):
                return False
            ha = a.hist if a.hist is not None else empty
            hb = b.hist if b.hist is not None else empty
            if not np.array_equal(ha, hb):
                return False
        return True

    # -- integration ---------------------------------------------------------

    def integrate_frame(self, frame: Frame, intr: CameraIntrinsics,
                        max_range: float = DEFAULT_MAX_RANGE,
                        obs_weight: float = 1.0) -> IntegrationStats:
        """Fuse one frame: TSDF updates along each pixel ray's truncation band,
        one class-count increment at each pixel's surface voxel.

        Per-frame updates to the same voxel are merged into a single weighted
        average, which equals repeated tsdf_update while below the weight cap.
        """
        if frame.prediction is None:
            raise ValueError("frame has no prediction label map")
        h, w = frame.depth.shape
        if (w, h) != (intr.width, intr.height):
            raise ValueError(
                f"depth {w}x{h} does not match intrinsics {intr.width}x{intr.height}")
        if (frame.prediction.width, frame.prediction.height) != (intr.width, intr.height):
            raise ValueError("prediction size does not match intrinsics")

        depth = frame.depth.astype(np.float64, copy=False).reshape(-1)
        labels = frame.prediction.data.reshape(-1)
        valid = (depth > 0) & (depth <= max_range)
        n_valid = int(valid.sum())
        if n_valid == 0:
            return IntegrationStats()

        rays = intr.pixel_rays().reshape(-1, 3)[valid]
        z = depth[valid]
        p_cam = rays * z[:, None]
        p_world = p_cam @ frame.pose.rotation.T + frame.pose.translation
        origin = frame.pose.translation

        ray_vec = p_world - origin
        ray_len = np.linalg.norm(ray_vec, axis=1)
        unit = ray_vec / ray_len[:, None]

        vs = self.voxel_size
        trunc = self.truncation
        # Half-voxel sampling covers every voxel the band crosses (offset 0 is
        # always a sample, so the surface voxel itself is always updated).
        n_steps = int(round(2.0 * trunc / (vs / 2.0))) + 1
        offsets = np.linspace(-trunc, trunc, n_steps)

        t_samples = ray_len[None, :] + offsets[:, None]          # (K, N)
        pts = origin + unit[None, :, :] * t_samples[..., None]    # (K, N, 3)
        vox = np.floor(pts / vs).astype(np.int64)

        # SDF evaluated at the voxel center, projected on the ray: constant per
        # (ray, voxel) pair, so duplicate samples in one voxel are dropped.
        centers = (vox + 0.5) * vs
        sdf = np.einsum("knj,nj->kn", p_world[None, :, :] - centers, unit)
        keep = np.ones(t_samples.shape, dtype=bool)
        keep[1:] = (vox[1:] != vox[:-1]).any(axis=2)
        # A band can reach behind the camera when depth < truncation.
        keep &= t_samples > 0

        vox_f = vox[keep]
        sdf_f = np.clip(sdf[keep], -trunc, trunc) * obs_weight
        block_keys = _pack_block_keys(vox_f >> 3)
        local = vox_f & 7
        lin = (local[:, 0] * BLOCK_SIDE + local[:, 1]) * BLOCK_SIDE + local[:, 2]
        combined = block_keys * BLOCK_VOXELS + lin

        uniq, inv, counts = np.unique(combined, return_inverse=True, return_counts=True)
        sums = np.zeros(uniq.shape[0], dtype=np.float64)
        np.add.at(sums, inv, sdf_f)
        weights_added = counts.astype(np.float64) * obs_weight

        uniq_blocks = uniq // BLOCK_VOXELS
        uniq_lin = (uniq % BLOCK_VOXELS).astype(np.int64)
        block_starts = np.flatnonzero(np.r_[True, uniq_blocks[1:] != uniq_blocks[:-1]])
        block_ends = np.r_[block_starts[1:], uniq_blocks.shape[0]]
        for s, e in zip(block_starts, block_ends):
            key = _unpack_block_key(int(uniq_blocks[s]))
            blk = self.blocks.get(key)
            if blk is None:
                blk = self.blocks[key] = _Block(self.num_classes)
            li = uniq_lin[s:e]
            t_old = blk.tsdf[li].astype(np.float64)
            w_old = blk.weight[li].astype(np.float64)
            w_add = weights_added[s:e]
            blk.tsdf[li] = ((t_old * w_old + sums[s:e]) / (w_old + w_add)).astype(np.float32)
            blk.weight[li] = np.minimum(w_old + w_add, self.max_weight).astype(np.float32)

        # Semantic counts at the surface voxel only.
        sem_labels = labels[valid]
        sem_sel = sem_labels != IGNORE_ID
        n_sem = int(sem_sel.sum())
        if n_sem:
            surf_vox = np.floor(p_world[sem_sel] / vs).astype(np.int64)
            cls = sem_labels[sem_sel].astype(np.int64)
            sem_keys = (_pack_block_keys(surf_vox >> 3) * BLOCK_VOXELS
                        + ((surf_vox[:, 0] & 7) * BLOCK_SIDE + (surf_vox[:, 1] & 7))
                        * BLOCK_SIDE + (surf_vox[:, 2] & 7)) * self.num_classes + cls
            s_uniq, s_counts = np.unique(sem_keys, return_counts=True)
            s_cls = s_uniq % self.num_classes
            s_vox = s_uniq // self.num_classes
            s_lin = s_vox % BLOCK_VOXELS
            s_blocks = s_vox // BLOCK_VOXELS
            starts = np.flatnonzero(np.r_[True, s_blocks[1:] != s_blocks[:-1]])
            ends = np.r_[starts[1:], s_blocks.shape[0]]
            for s, e in zip(starts, ends):
                key = _unpack_block_key(int(s_blocks[s]))
                blk = self.blocks.get(key)
                if blk is None:  # surface voxel always receives a TSDF update
                    blk = self.blocks[key] = _Block(self.num_classes)
                hist = blk.ensure_hist(self.num_classes)
                np.add.at(hist, (s_lin[s:e], s_cls[s:e]), s_counts[s:e].astype(np.uint32))

        return IntegrationStats(
            voxels_updated=int(uniq.shape[0]),
            points_integrated=n_valid,
            semantic_points=n_sem,
        )


# -- raycasting ---------------------------------------------------------------


@dataclass
class RaycastHit:
    position: np.ndarray        # world, meters
    voxel: tuple[int, int, int]
    class_id: int
    t: float                    # distance along the (unit) ray direction


def raycast_pixel(volume: SemanticVolume, origin: np.ndarray, direction: np.ndarray,
                  max_range: float = DEFAULT_MAX_RANGE) -> RaycastHit | None:
    """March voxels along a single ray; return the first + -> - zero crossing.

    The crossing must occur between two consecutively traversed voxels that
    both carry observations (weight > 0); the TSDF is attributed to each
    voxel at the midpoint of the ray's chord through it, and the crossing
    position is linearly interpolated between those midpoints.
    """
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("raycast direction must be a unit vector")
    if volume.is_empty():
        return None
    origin = np.asarray(origin, dtype=np.float64)
    vs = volume.voxel_size

    bounds = volume.voxel_bounds()
    lo_w = bounds[0] * vs
    hi_w = bounds[1] * vs
    # Slab test for an early-out limit; the march itself starts at the origin.
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (lo_w - origin) / direction
        t_hi = (hi_w - origin) / direction
    t_near = np.where(direction != 0, np.minimum(t_lo, t_hi), -np.inf)
    t_far = np.where(direction != 0, np.maximum(t_lo, t_hi), np.inf)
    outside = (direction == 0) & ((origin < lo_w) | (origin > hi_w))
    if outside.any():
        return None
    enter = max(float(t_near.max()), 0.0)
    exit_ = float(t_far.min())
    limit = min(max_range, exit_)
    if enter > limit:
        return None

    idx = np.floor(origin / vs).astype(np.int64)
    step = np.sign(direction).astype(np.int64)
    tmax = np.full(3, np.inf)
    tdelta = np.full(3, np.inf)
    for k in range(3):
        if direction[k] != 0:
            bound = idx[k] + (1 if step[k] > 0 else 0)
            tmax[k] = (bound * vs - origin[k]) / direction[k]
            tdelta[k] = vs / abs(direction[k])

    t_entry = 0.0
    prev_ok = False
    prev_val = 0.0
    prev_mid = 0.0
    prev_class = IGNORE_ID
    prev_voxel = (0, 0, 0)
    blocks = volume.blocks
    cached_key: tuple[int, int, int] | None = None
    cached_blk: _Block | None = None

    while t_entry <= limit:
        # axis of strict minimum, x before y before z on ties
        if tmax[0] <= tmax[1] and tmax[0] <= tmax[2]:
            axis = 0
        elif tmax[1] <= tmax[2]:
            axis = 1
        else:
            axis = 2
        t_exit = float(tmax[axis])
        mid = (t_entry + t_exit) / 2.0

        key = (int(idx[0]) >> 3, int(idx[1]) >> 3, int(idx[2]) >> 3)
        if key != cached_key:
            cached_key = key
            cached_blk = blocks.get(key)
        if cached_blk is not None:
            lin = (((int(idx[0]) & 7) * BLOCK_SIDE + (int(idx[1]) & 7))
                   * BLOCK_SIDE + (int(idx[2]) & 7))
            weighted = cached_blk.weight[lin] > 0
            val = float(cached_blk.tsdf[lin]) if weighted else 0.0
            if cached_blk.hist is not None:
                klass = argmax_class(cached_blk.hist[lin])
            else:
                klass = IGNORE_ID
        else:
            weighted = False
            val = 0.0
            klass = IGNORE_ID

        if weighted and prev_ok and prev_val > 0 and val <= 0:
            t_hit = prev_mid + (mid - prev_mid) * prev_val / (prev_val - val)
            if t_hit > max_range:
                return None
            # The hit voxel is the vote-carrying side of the crossing pair:
            # the first non-positive voxel, or its positive partner when no
            # surface point ever landed in the former (grazing rays).
            pos = origin + direction * t_hit
            if klass != IGNORE_ID:
                hit_idx = (int(idx[0]), int(idx[1]), int(idx[2]))
                class_id = klass
            else:
                hit_idx = prev_voxel
                class_id = prev_class
            return RaycastHit(pos, hit_idx, class_id, t_hit)

        prev_ok = weighted
        prev_val = val
        prev_mid = mid
        prev_class = klass
        prev_voxel = (int(idx[0]), int(idx[1]), int(idx[2]))

        idx[axis] += step[axis]
        tmax[axis] += tdelta[axis]
        t_entry = t_exit

    return None


class LabelRenderer:
    """Read-only view of a volume for rendering label maps.

    Builds dense TSDF / weight / majority-class grids over the allocated
    bounding box once, then casts every pixel ray with a vectorized DDA.
    Stretches of unallocated blocks are skipped in one step per block; that
    cannot change any result because a zero crossing needs two consecutive
    voxels with weight > 0, and weighted voxels only exist inside allocated
    blocks (the skip resets the pairing exactly like the weightless voxels
    it jumps over would).
    """

    def __init__(self, volume: SemanticVolume, use_numba: bool | None = None):
        from ._raycast import HAVE_NUMBA
        self.use_numba = HAVE_NUMBA if use_numba is None else use_numba
        self.voxel_size = volume.voxel_size
        bounds = volume.voxel_bounds()
        self.empty = bounds is None
        if self.empty:
            return
        self.lo, hi = bounds
        shape = tuple((hi - self.lo).astype(int))
        self.tsdf = np.zeros(shape, dtype=np.float32)
        self.weighted = np.zeros(shape, dtype=bool)
        self.klass = np.full(shape, IGNORE_ID, dtype=np.uint8)
        self.block_lo = self.lo >> 3
        blk_shape = tuple(s // BLOCK_SIDE for s in shape)
        self.alloc = np.zeros(blk_shape, dtype=bool)
        for (bx, by, bz), blk in volume.blocks.items():
            self.alloc[bx - self.block_lo[0], by - self.block_lo[1],
                       bz - self.block_lo[2]] = True
            sx = bx * BLOCK_SIDE - self.lo[0]
            sy = by * BLOCK_SIDE - self.lo[1]
            sz = bz * BLOCK_SIDE - self.lo[2]
            sl = (slice(sx, sx + BLOCK_SIDE), slice(sy, sy + BLOCK_SIDE),
                  slice(sz, sz + BLOCK_SIDE))
            self.tsdf[sl] = blk.tsdf.reshape(BLOCK_SIDE, BLOCK_SIDE, BLOCK_SIDE)
            self.weighted[sl] = (blk.weight > 0).reshape(BLOCK_SIDE, BLOCK_SIDE, BLOCK_SIDE)
            if blk.hist is not None:
                cls = np.argmax(blk.hist, axis=1).astype(np.uint8)
                cls[blk.hist.sum(axis=1) == 0] = IGNORE_ID
                self.klass[sl] = cls.reshape(BLOCK_SIDE, BLOCK_SIDE, BLOCK_SIDE)

    def render(self, pose: Pose, intr: CameraIntrinsics,
               max_range: float = DEFAULT_MAX_RANGE) -> LabelMap:
        labels, _ = self.render_with_depth(pose, intr, max_range)
        return labels

    def render_with_depth(self, pose: Pose, intr: CameraIntrinsics,
                          max_range: float = DEFAULT_MAX_RANGE) -> tuple[LabelMap, np.ndarray]:
        """Label map plus z-depth of each hit (0 where the ray missed)."""
        h, w = intr.height, intr.width
        out_cls = np.full(h * w, IGNORE_ID, dtype=np.uint8)
        out_depth = np.zeros(h * w, dtype=np.float32)
        if self.empty:
            return LabelMap(out_cls.reshape(h, w), ROLE_MULTIVIEW), out_depth.reshape(h, w)

        rays_cam = intr.pixel_rays().reshape(-1, 3)
        inv_norm_all = 1.0 / np.linalg.norm(rays_cam, axis=1)
        dirs_all = (rays_cam * inv_norm_all[:, None]) @ pose.rotation.T
        origin = pose.translation
        vs = self.voxel_size
        shape = np.array(self.tsdf.shape, dtype=np.int64)

        if self.use_numba:
            from ._raycast import march_rays
            march_rays(origin, dirs_all, inv_norm_all,
                       self.lo.astype(np.int64), shape,
                       self.block_lo.astype(np.int64),
                       np.array(self.alloc.shape, dtype=np.int64),
                       self.tsdf, self.weighted, self.alloc, self.klass,
                       vs, max_range, out_cls, out_depth)
            return (LabelMap(out_cls.reshape(h, w), ROLE_MULTIVIEW),
                    out_depth.reshape(h, w))

        lo_w = self.lo * vs
        hi_w = (self.lo + shape) * vs
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = (lo_w - origin) / dirs_all
            t_hi = (hi_w - origin) / dirs_all
        zero_all = dirs_all == 0
        t_near = np.where(zero_all, -np.inf, np.minimum(t_lo, t_hi)).max(axis=1)
        t_far = np.where(zero_all, np.inf, np.maximum(t_lo, t_hi)).min(axis=1)
        never = (zero_all & ((origin < lo_w) | (origin > hi_w))).any(axis=1)
        limit_all = np.minimum(max_range, t_far)
        rows = np.flatnonzero(~never & (np.maximum(t_near, 0.0) <= limit_all))

        # compact per-ray state
        d = dirs_all[rows]
        inv_norm = inv_norm_all[rows]
        limit = limit_all[rows]
        step = np.sign(d).astype(np.int64)
        pos_step = step > 0
        idx = np.tile(np.floor(origin / vs).astype(np.int64), (rows.size, 1))
        with np.errstate(divide="ignore", invalid="ignore"):
            tmax = np.where(d == 0, np.inf, ((idx + pos_step) * vs - origin) / d)
            tdelta = np.where(d == 0, np.inf, vs / np.abs(d))
        t_entry = np.zeros(rows.size)
        prev_ok = np.zeros(rows.size, dtype=bool)
        prev_val = np.zeros(rows.size)
        prev_mid = np.zeros(rows.size)
        prev_cls = np.full(rows.size, IGNORE_ID, dtype=np.uint8)

        flat_tsdf = self.tsdf.reshape(-1)
        flat_weighted = self.weighted.reshape(-1)
        flat_klass = self.klass.reshape(-1)
        strides = np.array([shape[1] * shape[2], shape[2], 1], dtype=np.int64)
        blk_shape = np.array(self.alloc.shape, dtype=np.int64)
        blk_strides = np.array([blk_shape[1] * blk_shape[2], blk_shape[2], 1],
                               dtype=np.int64)
        flat_alloc = self.alloc.reshape(-1)

        while rows.size:
            rel_b = (idx >> 3) - self.block_lo
            in_box = ((rel_b >= 0) & (rel_b < blk_shape)).all(axis=1)
            in_alloc = in_box.copy()
            if in_box.any():
                in_alloc[in_box] = flat_alloc[rel_b[in_box] @ blk_strides]

            done = np.zeros(rows.size, dtype=bool)

            visit = np.flatnonzero(in_alloc)
            if visit.size:
                ta = tmax[visit]
                axis = np.where(
                    (ta[:, 0] <= ta[:, 1]) & (ta[:, 0] <= ta[:, 2]), 0,
                    np.where(ta[:, 1] <= ta[:, 2], 1, 2))
                t_exit = ta[np.arange(visit.size), axis]
                mid = (t_entry[visit] + t_exit) / 2.0

                rel = idx[visit] - self.lo
                flat = rel @ strides
                weighted = flat_weighted[flat]
                val = np.where(weighted, flat_tsdf[flat].astype(np.float64), 0.0)
                cur_cls = flat_klass[flat]

                crossing = prev_ok[visit] & weighted & (prev_val[visit] > 0) & (val <= 0)
                if crossing.any():
                    sel = visit[crossing]
                    pv = prev_val[sel]
                    pm = prev_mid[sel]
                    t_hit = pm + (mid[crossing] - pm) * pv / (pv - val[crossing])
                    ok = t_hit <= max_range
                    hit_sel = sel[ok]
                    if hit_sel.size:
                        pix = rows[hit_sel]
                        # class from the vote-carrying side of the pair
                        cls = cur_cls[crossing][ok]
                        cls = np.where(cls != IGNORE_ID, cls, prev_cls[hit_sel])
                        out_cls[pix] = cls
                        out_depth[pix] = (t_hit[ok] * inv_norm[hit_sel]).astype(np.float32)
                    # Crossed rays are finished either way: any later
                    # crossing would be farther than max_range.
                    done[sel] = True

                prev_ok[visit] = weighted
                prev_val[visit] = val
                prev_mid[visit] = mid
                prev_cls[visit] = cur_cls
                idx[visit, axis] += step[visit, axis]
                tmax[visit, axis] += tdelta[visit, axis]
                t_entry[visit] = t_exit

            skip = np.flatnonzero(~in_alloc)
            if skip.size:
                # jump to the current block's exit face in one step
                bound_vox = ((idx[skip] >> 3) + pos_step[skip]) << 3
                with np.errstate(divide="ignore", invalid="ignore"):
                    t_block = np.where(d[skip] == 0, np.inf,
                                       (bound_vox * vs - origin) / d[skip])
                axis = np.where(
                    (t_block[:, 0] <= t_block[:, 1]) & (t_block[:, 0] <= t_block[:, 2]), 0,
                    np.where(t_block[:, 1] <= t_block[:, 2], 1, 2))
                t_b = t_block[np.arange(skip.size), axis]
                new_idx = np.floor((origin + d[skip] * t_b[:, None]) / vs).astype(np.int64)
                arange = np.arange(skip.size)
                new_idx[arange, axis] = np.where(
                    step[skip, axis] > 0, bound_vox[arange, axis],
                    bound_vox[arange, axis] - 1)
                idx[skip] = new_idx
                with np.errstate(divide="ignore", invalid="ignore"):
                    tmax[skip] = np.where(
                        d[skip] == 0, np.inf,
                        ((new_idx + pos_step[skip]) * vs - origin) / d[skip])
                t_entry[skip] = t_b
                prev_ok[skip] = False

            done |= t_entry > limit
            if done.any():
                keep = ~done
                rows = rows[keep]
                d = d[keep]
                inv_norm = inv_norm[keep]
                limit = limit[keep]
                step = step[keep]
                pos_step = pos_step[keep]
                idx = idx[keep]
                tmax = tmax[keep]
                tdelta = tdelta[keep]
                t_entry = t_entry[keep]
                prev_ok = prev_ok[keep]
                prev_val = prev_val[keep]
                prev_mid = prev_mid[keep]
                prev_cls = prev_cls[keep]

        return LabelMap(out_cls.reshape(h, w), ROLE_MULTIVIEW), out_depth.reshape(h, w)


def render_labels(volume: SemanticVolume, pose: Pose, intr: CameraIntrinsics,
                  max_range: float = DEFAULT_MAX_RANGE) -> LabelMap:
    """Render the multi-view-consistent label map seen from one pose."""
    if volume.is_empty():
        raise ValueError("cannot render labels from an empty volume")
    return LabelRenderer(volume).render(pose, intr, max_range)


# -- persistence ---------------------------------------------------------------
# Little-endian binary: magic SVOL, u32 version, f64 voxel_size, f64 truncation,
# u32 num_classes, u64 block count; per block 3xi32 index then 512 voxels of
# (f32 tsdf, f32 weight, u16 entry count, (u8 class, u32 count) pairs).

_HEADER = struct.Struct("<4sIddIQ")
_BLOCK_IDX = struct.Struct("<3i")


def save_volume(volume: SemanticVolume, path: str | Path) -> None:
    volume.prune()
    out = bytearray()
    out += _HEADER.pack(_MAGIC, _VERSION, volume.voxel_size, volume.truncation,
                        volume.num_classes, len(volume.blocks))
    for key in sorted(volume.blocks):
        blk = volume.blocks[key]
        out += _BLOCK_IDX.pack(*key)
        hist = blk.hist
        for lin in range(BLOCK_VOXELS):
            if hist is not None:
                nz = np.flatnonzero(hist[lin])
            else:
                nz = ()
            out += struct.pack("<ffH", float(blk.tsdf[lin]), float(blk.weight[lin]), len(nz))
            for c in nz:
                out += struct.pack("<BI", int(c), int(hist[lin, c]))
    Path(path).write_bytes(bytes(out))


def load_volume(path: str | Path) -> SemanticVolume:
    buf = Path(path).read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(buf):
            raise FormatError(f"{path}: truncated at byte {off} (needed {n} more)")
        chunk = buf[off:off + n]
        off += n
        return chunk

    magic, version, voxel_size, truncation, num_classes, n_blocks = \
        _HEADER.unpack(take(_HEADER.size))
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    vol = SemanticVolume(voxel_size, truncation, num_classes)
    for _ in range(n_blocks):
        key = _BLOCK_IDX.unpack(take(_BLOCK_IDX.size))
        blk = _Block(num_classes)
        for lin in range(BLOCK_VOXELS):
            tsdf, weight, n_entries = struct.unpack("<ffH", take(10))
            blk.tsdf[lin] = tsdf
            blk.weight[lin] = weight
            for _e in range(n_entries):
                c, cnt = struct.unpack("<BI", take(5))
                if c >= num_classes:
                    raise FormatError(f"{path}: class id {c} out of range at byte {off - 5}")
                blk.ensure_hist(num_classes)[lin, c] = cnt
        vol.blocks[key] = blk
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes at byte {off}")
    return vol
