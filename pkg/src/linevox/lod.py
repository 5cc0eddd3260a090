"""Density octree and representative lines for level-of-detail shading.

Level 0 stores, per voxel, the summed length-times-opacity of its segments.
Coarser levels average 2x2x2 child blocks, so the mean is preserved level to
level.  Alongside the density, every coarse voxel gets one representative
line obtained by averaging member segments (flipping those that point against
the running average) and snapping the averaged endpoints back onto face bins.

All scalar fields are indexed [z, y, x]; flattened in C order that matches
the voxel linear index x + r_x*(y + r_y*z) used by the segment arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .voxelizer import VoxelModel, quantize_point_on_face

_FACE_AXIS = (0, 0, 1, 1, 2, 2)
_FACE_SIDE = (0.0, 1.0, 0.0, 1.0, 0.0, 1.0)
_FACE_UV = ((1, 2), (1, 2), (0, 2), (0, 2), (0, 1), (0, 1))


@dataclass
class DensityOctree:
    """Dense density fields, level 0 at grid resolution, each level half the
    previous per axis (rounded up) down to 1x1x1."""

    levels: list

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def dims(self, level: int):
        dz, dy, dx = self.levels[level].shape
        return dx, dy, dz

    def sample(self, point, level: int) -> float:
        """Trilinear sample at a grid-space point; cell centers carry the
        values, queries clamp to the field edge."""
        f = self.levels[level]
        h = float(1 << level)
        dzyx = np.array(f.shape, dtype=np.int64)
        q = np.asarray(point, dtype=np.float64)[::-1] / h - 0.5
        base = np.floor(q).astype(np.int64)
        frac = q - base
        lo = np.clip(base, 0, dzyx - 1)
        hi = np.clip(base + 1, 0, dzyx - 1)
        out = 0.0
        for cz, wz in ((lo[0], 1 - frac[0]), (hi[0], frac[0])):
            for cy, wy in ((lo[1], 1 - frac[1]), (hi[1], frac[1])):
                for cx, wx in ((lo[2], 1 - frac[2]), (hi[2], frac[2])):
                    out += wz * wy * wx * float(f[cz, cy, cx])
        return out


class RepLevel(NamedTuple):
    valid: np.ndarray   # (V,) bool
    a: np.ndarray       # (V,3) float32, grid units
    b: np.ndarray       # (V,3) float32
    weight: np.ndarray  # (V,) float32, summed member length


@dataclass
class RepLineField:
    """One optional representative line per voxel at every level >= 1
    (index 0 is None: the fine level keeps its real segments)."""

    levels: list

    def level_dims(self, level: int, octree_dims) -> tuple:
        d = octree_dims
        for _ in range(level):
            d = tuple((x + 1) // 2 for x in d)
        return d


def compute_density_level0(model: VoxelModel) -> np.ndarray:
    """Per-voxel sum of segment length times transfer-table opacity."""
    dx, dy, dz = model.spec.dims
    if model.segment_count == 0:
        return np.zeros((dz, dy, dx), dtype=np.float32)
    a = model.seg_a.astype(np.float64)
    b = model.seg_b.astype(np.float64)
    length = np.linalg.norm(b - a, axis=1)
    sigma = model.transfer_table[model.seg_attr, 3].astype(np.float64)
    vox = model.seg_voxel.astype(np.int64)
    lin = vox[:, 0] + dx * (vox[:, 1] + dy * vox[:, 2])
    flat = np.bincount(lin, weights=length * sigma, minlength=model.voxel_count)
    return flat.reshape(dz, dy, dx).astype(np.float32)


def _coarsen(field: np.ndarray) -> np.ndarray:
    """Parent = mean of existing children, summed in fixed corner order
    (z, y, x offsets lexicographic) so results are bit-reproducible."""
    dz, dy, dx = field.shape
    pz, py, px = (dz + 1) // 2, (dy + 1) // 2, (dx + 1) // 2
    acc = np.zeros((pz, py, px), dtype=field.dtype)
    cnt = np.zeros((pz, py, px), dtype=field.dtype)
    for oz in (0, 1):
        for oy in (0, 1):
            for ox in (0, 1):
                sub = field[oz::2, oy::2, ox::2]
                acc[:sub.shape[0], :sub.shape[1], :sub.shape[2]] += sub
                cnt[:sub.shape[0], :sub.shape[1], :sub.shape[2]] += 1
    return acc / cnt


def build_octree(level0: np.ndarray) -> DensityOctree:
    if level0.ndim != 3 or level0.size == 0:
        raise ValueError(f"need a non-empty 3D field, got shape {level0.shape}")
    levels = [np.ascontiguousarray(level0, dtype=np.float32)]
    while levels[-1].shape != (1, 1, 1):
        levels.append(_coarsen(levels[-1]))
    return DensityOctree(levels=levels)


def _snap_to_face_bin(p_local: np.ndarray, n_bins: int):
    """Nearest face-bin center (unit-cube local coords) for an interior
    point; ties go to the smallest face ID."""
    best = None
    for face in range(6):
        axis = _FACE_AXIS[face]
        ua, va = _FACE_UV[face]
        u = min(max(p_local[ua], 0.0), 1.0)
        v = min(max(p_local[va], 0.0), 1.0)
        _, c = quantize_point_on_face(np.array([u, v]), face, n_bins)
        cand = np.empty(3)
        cand[axis] = _FACE_SIDE[face]
        cand[ua], cand[va] = c
        d = float(np.sum((cand - p_local) ** 2))
        if best is None or d < best[0] - 1e-15:
            best = (d, cand)
    return best[1]


def representative_line(starts, ends, origin, size: float, n_bins: int):
    """Average the member segments of one (coarse) voxel into a single line.

    Processes segments in the given order; a segment whose direction points
    more than 90 degrees away from the running average direction is flipped
    (exactly 90 degrees does not flip).  The averaged start/end are snapped
    to the nearest face-bin center of the voxel (origin + size cube).
    Returns (a, b, weight) in grid units, or None without segments.
    """
    starts = np.asarray(starts, dtype=np.float64).reshape(-1, 3)
    ends = np.asarray(ends, dtype=np.float64).reshape(-1, 3)
    m = starts.shape[0]
    if m == 0:
        return None
    origin = np.asarray(origin, dtype=np.float64)
    sum_a = np.zeros(3)
    sum_b = np.zeros(3)
    for i in range(m):
        a, b = starts[i], ends[i]
        if i > 0 and np.dot(b - a, sum_b - sum_a) < 0.0:
            a, b = b, a
        sum_a += a
        sum_b += b
    avg_a = (sum_a / m - origin) / size
    avg_b = (sum_b / m - origin) / size
    qa = _snap_to_face_bin(avg_a, n_bins) * size + origin
    qb = _snap_to_face_bin(avg_b, n_bins) * size + origin
    weight = float(np.sum(np.linalg.norm(ends - starts, axis=1)))
    return qa, qb, weight


def _endpoint_on_face(p_local: np.ndarray, face: int, eps=1e-9) -> bool:
    return abs(p_local[_FACE_AXIS[face]] - _FACE_SIDE[face]) <= eps


def _adjacency_snap(level: RepLevel, dims, size: float, n_bins: int) -> None:
    """Where two face-adjacent representatives both end on the shared face,
    move both endpoints to the bin holding their average (one pass, axes in
    x, y, z order, voxels in scan order)."""
    dx, dy, dz = dims
    valid, a, b = level.valid, level.a, level.b

    def endpoints_on(lin: int, face: int):
        out = []
        base = np.array([lin % dx, (lin // dx) % dy, lin // (dx * dy)], dtype=np.float64) * size
        for arr in (a, b):
            local = (arr[lin].astype(np.float64) - base) / size
            if _endpoint_on_face(local, face):
                out.append(arr)
        return out

    occupied = np.nonzero(valid)[0]
    for axis in range(3):
        step = (1, dx, dx * dy)[axis]
        n_axis = (dx, dy, dz)[axis]
        for lin in occupied:
            lin = int(lin)
            coord = (lin // step) % n_axis
            if coord + 1 >= n_axis:
                continue
            nb = lin + step
            if not valid[nb]:
                continue
            mine = endpoints_on(lin, 2 * axis + 1)
            theirs = endpoints_on(nb, 2 * axis)
            if not mine or not theirs:
                continue
            arr_m, arr_t = mine[0], theirs[0]
            avg = 0.5 * (arr_m[lin].astype(np.float64) + arr_t[nb].astype(np.float64))
            base = np.array([lin % dx, (lin // dx) % dy, lin // (dx * dy)],
                            dtype=np.float64) * size
            local = (avg - base) / size
            local[axis] = 1.0  # the shared face seen from the lower voxel
            ua, va = _FACE_UV[2 * axis + 1]
            _, c = quantize_point_on_face(np.array([local[ua], local[va]]), 2 * axis + 1, n_bins)
            snapped = avg.copy()
            snapped[axis] = base[axis] + size
            snapped[ua] = base[ua] + c[0] * size
            snapped[va] = base[va] + c[1] * size
            arr_m[lin] = snapped.astype(np.float32)
            arr_t[nb] = snapped.astype(np.float32)


def build_rep_lines(model: VoxelModel, octree: DensityOctree,
                    adjacency: bool = True) -> RepLineField:
    """Representative lines for every level >= 1.

    Level 1 averages the model's segments grouped into 2x2x2 voxel blocks;
    each further level averages the previous level's representatives.  The
    thickness weight is the summed member segment length, propagated upward.
    """
    n_bins = model.spec.bins_per_axis
    dims0 = model.spec.dims
    levels: list = [None]

    cur_a = model.seg_a.astype(np.float64)
    cur_b = model.seg_b.astype(np.float64)
    cur_vox = model.seg_voxel.astype(np.int64)
    cur_w = np.linalg.norm(cur_b - cur_a, axis=1)
    cur_dims = dims0

    for level in range(1, octree.n_levels):
        pd = tuple((x + 1) // 2 for x in cur_dims)
        pdx, pdy, pdz = pd
        size = float(1 << level)
        pvox = cur_vox // 2
        plin = pvox[:, 0] + pdx * (pvox[:, 1] + pdy * pvox[:, 2])
        order = np.argsort(plin, kind="stable")
        plin_s = plin[order]
        a_s, b_s, w_s = cur_a[order], cur_b[order], cur_w[order]

        n_parent = pdx * pdy * pdz
        valid = np.zeros(n_parent, dtype=bool)
        rep_a = np.zeros((n_parent, 3), dtype=np.float32)
        rep_b = np.zeros((n_parent, 3), dtype=np.float32)
        rep_w = np.zeros(n_parent, dtype=np.float32)

        bounds = np.searchsorted(plin_s, np.arange(n_parent + 1))
        for lin in np.unique(plin_s):
            i0, i1 = bounds[lin], bounds[lin + 1]
            if i0 == i1:
                continue
            origin = np.array([lin % pdx, (lin // pdx) % pdy, lin // (pdx * pdy)],
                              dtype=np.float64) * size
            rep = representative_line(a_s[i0:i1], b_s[i0:i1], origin, size, n_bins)
            qa, qb, _ = rep
            valid[lin] = True
            rep_a[lin] = qa
            rep_b[lin] = qb
            rep_w[lin] = float(w_s[i0:i1].sum())

        lvl = RepLevel(valid=valid, a=rep_a, b=rep_b, weight=rep_w)
        if adjacency:
            _adjacency_snap(lvl, pd, size, n_bins)
        levels.append(lvl)

        keep = np.nonzero(valid)[0]
        cur_a = lvl.a[keep].astype(np.float64)
        cur_b = lvl.b[keep].astype(np.float64)
        cur_w = lvl.weight[keep].astype(np.float64)
        cur_vox = np.stack([keep % pdx, (keep // pdx) % pdy, keep // (pdx * pdy)], axis=1)
        cur_dims = pd

    return RepLineField(levels=levels)
