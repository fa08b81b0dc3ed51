"""Jitted ray-march kernel used by LabelRenderer when numba is available.

Mirrors the numpy lockstep implementation op for op (same formulas, same
tie-breaks), so both paths produce identical maps; a unit test holds them
to that.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap


@njit(cache=True)
def march_rays(origin, dirs, inv_norm, lo, shape, block_lo, blk_shape,
               tsdf, weighted, alloc, klass, vs, max_range,
               out_cls, out_depth):
    n = dirs.shape[0]
    for i in range(n):
        # slab limit over the dense bounds
        t_far = np.inf
        miss = False
        for k in range(3):
            d = dirs[i, k]
            lo_w = lo[k] * vs
            hi_w = (lo[k] + shape[k]) * vs
            if d == 0.0:
                if origin[k] < lo_w or origin[k] > hi_w:
                    miss = True
                    break
            else:
                t1 = (lo_w - origin[k]) / d
                t2 = (hi_w - origin[k]) / d
                hi_t = t1 if t1 > t2 else t2
                if hi_t < t_far:
                    t_far = hi_t
        if miss:
            continue
        limit = max_range if max_range < t_far else t_far

        ix = int(np.floor(origin[0] / vs))
        iy = int(np.floor(origin[1] / vs))
        iz = int(np.floor(origin[2] / vs))
        idx = np.empty(3, dtype=np.int64)
        idx[0], idx[1], idx[2] = ix, iy, iz
        step = np.empty(3, dtype=np.int64)
        tmax = np.empty(3, dtype=np.float64)
        tdelta = np.empty(3, dtype=np.float64)
        for k in range(3):
            d = dirs[i, k]
            if d > 0:
                step[k] = 1
            elif d < 0:
                step[k] = -1
            else:
                step[k] = 0
            if d != 0.0:
                bound = idx[k] + (1 if d > 0 else 0)
                tmax[k] = (bound * vs - origin[k]) / d
                tdelta[k] = vs / abs(d)
            else:
                tmax[k] = np.inf
                tdelta[k] = np.inf

        t_entry = 0.0
        prev_ok = False
        prev_val = 0.0
        prev_mid = 0.0
        prev_cls = np.uint8(255)

        while t_entry <= limit:
            bx = (idx[0] >> 3) - block_lo[0]
            by = (idx[1] >> 3) - block_lo[1]
            bz = (idx[2] >> 3) - block_lo[2]
            in_alloc = (0 <= bx < blk_shape[0] and 0 <= by < blk_shape[1]
                        and 0 <= bz < blk_shape[2] and alloc[bx, by, bz])
            if in_alloc:
                if tmax[0] <= tmax[1] and tmax[0] <= tmax[2]:
                    axis = 0
                elif tmax[1] <= tmax[2]:
                    axis = 1
                else:
                    axis = 2
                t_exit = tmax[axis]
                mid = (t_entry + t_exit) / 2.0

                rx = idx[0] - lo[0]
                ry = idx[1] - lo[1]
                rz = idx[2] - lo[2]
                ok = weighted[rx, ry, rz]
                val = np.float64(tsdf[rx, ry, rz]) if ok else 0.0
                cur_cls = klass[rx, ry, rz]

                if ok and prev_ok and prev_val > 0.0 and val <= 0.0:
                    t_hit = prev_mid + (mid - prev_mid) * prev_val / (prev_val - val)
                    if t_hit <= max_range:
                        # class from the vote-carrying side of the pair
                        out_cls[i] = cur_cls if cur_cls != np.uint8(255) else prev_cls
                        out_depth[i] = np.float32(t_hit * inv_norm[i])
                    break

                prev_ok = ok
                prev_val = val
                prev_mid = mid
                prev_cls = cur_cls
                idx[axis] += step[axis]
                tmax[axis] += tdelta[axis]
                t_entry = t_exit
            else:
                # skip the unallocated block in one step
                t_b = np.inf
                axis = 0
                bv_axis = 0
                for k in range(3):
                    d = dirs[i, k]
                    if d == 0.0:
                        continue
                    bound_vox = ((idx[k] >> 3) + (1 if d > 0 else 0)) << 3
                    tk = (bound_vox * vs - origin[k]) / d
                    if tk < t_b:
                        t_b = tk
                        axis = k
                        bv_axis = bound_vox
                for k in range(3):
                    idx[k] = int(np.floor((origin[k] + dirs[i, k] * t_b) / vs))
                idx[axis] = bv_axis if dirs[i, axis] > 0 else bv_axis - 1
                t_entry = t_b
                for k in range(3):
                    d = dirs[i, k]
                    if d != 0.0:
                        bound = idx[k] + (1 if d > 0 else 0)
                        tmax[k] = (bound * vs - origin[k]) / d
                    else:
                        tmax[k] = np.inf
                prev_ok = False
