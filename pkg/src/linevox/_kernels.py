"""JIT-compiled kernels shared by the renderer, the brute-force oracle, and
the illumination queries.

Everything geometric lives here exactly once: the ray/tube and ray/sphere
tests, the DDA grid walk, hit ordering, de-duplication, and front-to-back
compositing are the same compiled functions for the accelerated renderer and
the all-primitives oracle, so image disagreements can only come from
traversal or gather logic.

Hit pipeline semantics (identical in both renderers):
  * a segment contributes a slab-clipped cylinder plus two endpoint spheres;
  * a hit is owned by the voxel whose [t0, t1) traversal window contains its
    entry t (windows tile the ray, so exactly one owner exists);
  * hits composite in (t_in, home voxel, line id, kind) order;
  * per (home voxel, line id) only the first hit composites: tube and joint
    spheres of one segment act as a single capsule-like primitive;
  * a sphere whose center coincides bit-for-bit with an already composited
    sphere is skipped without touching the id masks (chained chords share
    their joint sphere but must keep their own tubes).
"""

import os

# The worker-parity contract renders with 1..8 threads; numba sizes its pool
# from this variable at import time, so it must be set before numba loads
# even on boxes with fewer cores.
if "NUMBA_NUM_THREADS" not in os.environ:
    os.environ["NUMBA_NUM_THREADS"] = str(max(8, os.cpu_count() or 1))
# the default layer probe warns about an old TBB build; omp works everywhere here
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numba
import numpy as np
from numba import njit, prange

MAX_WINDOW_HITS = 1024
MAX_PIXEL_HITS = 8192
MAX_SEEN = 256

KIND_TUBE = 0
KIND_SPHERE = 1

OPACITY_CONSTANT = 0
OPACITY_TRANSFER = 1
OPACITY_DISTANCE = 2

SHADOW_NONE = 0
SHADOW_HARD = 1
SHADOW_REPLINES = 2
SHADOW_CONE = 3

AO_NONE = 0
AO_HEMISPHERE = 1
AO_DENSITY = 2
AO_PRECOMPUTED = 3


# numba freezes its pool-size check when it first loads, so a config value read
# later (after an env reload) may exceed what set_num_threads accepts; capture
# the limit that was live at import and clamp against that
_THREAD_LIMIT = int(numba.config.NUMBA_NUM_THREADS)


def effective_threads(requested: int) -> int:
    return max(1, min(int(requested), _THREAD_LIMIT))


def set_threads(workers: int) -> int:
    eff = effective_threads(workers)
    numba.set_num_threads(eff)
    return eff


# --- primitive intersections ---------------------------------------------------

@njit(cache=True, fastmath=False)
def intersect_tube_raw(ox, oy, oz, dx, dy, dz, ax, ay, az, bx, by, bz, r):
    """Slab-clipped infinite cylinder around segment AB.

    Returns (hit, t_in, t_out, nx, ny, nz); t_in is clamped to 0 when the
    origin is inside, the normal is the radial direction at entry.
    """
    ux, uy, uz = bx - ax, by - ay, bz - az
    length = np.sqrt(ux * ux + uy * uy + uz * uz)
    if length < 1e-12:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0
    ux, uy, uz = ux / length, uy / length, uz / length
    mx, my, mz = ox - ax, oy - ay, oz - az
    du = dx * ux + dy * uy + dz * uz
    mu = mx * ux + my * uy + mz * uz
    nx_, ny_, nz_ = dx - du * ux, dy - du * uy, dz - du * uz
    qx, qy, qz = mx - mu * ux, my - mu * uy, mz - mu * uz
    a = nx_ * nx_ + ny_ * ny_ + nz_ * nz_
    c = qx * qx + qy * qy + qz * qz - r * r
    if a < 1e-14:
        # ray parallel to the axis: either always inside the radius or never
        if c > 0.0:
            return False, 0.0, 0.0, 0.0, 0.0, 0.0
        t0 = -np.inf
        t1 = np.inf
    else:
        b = 2.0 * (nx_ * qx + ny_ * qy + nz_ * qz)
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            return False, 0.0, 0.0, 0.0, 0.0, 0.0
        sq = np.sqrt(disc)
        t0 = (-b - sq) / (2.0 * a)
        t1 = (-b + sq) / (2.0 * a)
    # slab between the planes through A and B
    if du == 0.0:
        if mu < 0.0 or mu > length:
            return False, 0.0, 0.0, 0.0, 0.0, 0.0
    else:
        s0 = (0.0 - mu) / du
        s1 = (length - mu) / du
        if s0 > s1:
            s0, s1 = s1, s0
        if s0 > t0:
            t0 = s0
        if s1 < t1:
            t1 = s1
    if t1 < t0 or t1 < 0.0:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0
    t_in = t0 if t0 > 0.0 else 0.0
    px, py, pz = ox + t_in * dx, oy + t_in * dy, oz + t_in * dz
    wx, wy, wz = px - ax, py - ay, pz - az
    wu = wx * ux + wy * uy + wz * uz
    rx, ry, rz = wx - wu * ux, wy - wu * uy, wz - wu * uz
    rn = np.sqrt(rx * rx + ry * ry + rz * rz)
    if rn < 1e-12:
        rx, ry, rz = -dx, -dy, -dz
    else:
        rx, ry, rz = rx / rn, ry / rn, rz / rn
    return True, t_in, t1, rx, ry, rz


@njit(cache=True, fastmath=False)
def intersect_sphere_raw(ox, oy, oz, dx, dy, dz, cx, cy, cz, r):
    """Returns (hit, t_in, t_out, nx, ny, nz) with the same clamping rules."""
    mx, my, mz = ox - cx, oy - cy, oz - cz
    b = 2.0 * (dx * mx + dy * my + dz * mz)
    c = mx * mx + my * my + mz * mz - r * r
    disc = b * b - 4.0 * c
    if disc < 0.0:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0
    sq = np.sqrt(disc)
    t0 = (-b - sq) / 2.0
    t1 = (-b + sq) / 2.0
    if t1 < 0.0:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0
    t_in = t0 if t0 > 0.0 else 0.0
    px, py, pz = ox + t_in * dx, oy + t_in * dy, oz + t_in * dz
    nx_, ny_, nz_ = px - cx, py - cy, pz - cz
    nn = np.sqrt(nx_ * nx_ + ny_ * ny_ + nz_ * nz_)
    if nn < 1e-12:
        nx_, ny_, nz_ = -dx, -dy, -dz
    else:
        nx_, ny_, nz_ = nx_ / nn, ny_ / nn, nz_ / nn
    return True, t_in, t1, nx_, ny_, nz_


# --- DDA traversal --------------------------------------------------------------

@njit(cache=True, fastmath=False)
def dda_collect(ox, oy, oz, dx, dy, dz, rx, ry, rz, pad, out_vox, out_t):
    """Voxel walk over the grid dilated by `pad` voxels on every side.

    Fills out_vox (n,3) and out_t (n,2) with the visited voxels and their
    half-open [t0, t1) windows; windows tile the in-box span and zero-length
    visits are dropped.  Returns the number of windows.
    """
    t_enter = -np.inf
    t_exit = np.inf
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    lo = (-float(pad), -float(pad), -float(pad))
    hi = (float(rx + pad), float(ry + pad), float(rz + pad))
    for axis in range(3):
        if d[axis] == 0.0:
            if o[axis] < lo[axis] or o[axis] >= hi[axis]:
                return 0
        else:
            ta = (lo[axis] - o[axis]) / d[axis]
            tb = (hi[axis] - o[axis]) / d[axis]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t_enter:
                t_enter = ta
            if tb < t_exit:
                t_exit = tb
    if t_enter < 0.0:
        t_enter = 0.0
    if t_exit <= t_enter:
        return 0

    px = ox + t_enter * dx
    py = oy + t_enter * dy
    pz = oz + t_enter * dz
    ix = int(np.floor(px))
    iy = int(np.floor(py))
    iz = int(np.floor(pz))
    ilo = -pad
    ihx, ihy, ihz = rx + pad - 1, ry + pad - 1, rz + pad - 1
    ix = min(max(ix, ilo), ihx)
    iy = min(max(iy, ilo), ihy)
    iz = min(max(iz, ilo), ihz)

    step_x = 1 if dx > 0.0 else (-1 if dx < 0.0 else 0)
    step_y = 1 if dy > 0.0 else (-1 if dy < 0.0 else 0)
    step_z = 1 if dz > 0.0 else (-1 if dz < 0.0 else 0)
    big = np.inf
    tmax_x = ((ix + (1 if step_x > 0 else 0)) - ox) / dx if step_x != 0 else big
    tmax_y = ((iy + (1 if step_y > 0 else 0)) - oy) / dy if step_y != 0 else big
    tmax_z = ((iz + (1 if step_z > 0 else 0)) - oz) / dz if step_z != 0 else big
    tdel_x = abs(1.0 / dx) if step_x != 0 else big
    tdel_y = abs(1.0 / dy) if step_y != 0 else big
    tdel_z = abs(1.0 / dz) if step_z != 0 else big

    n = 0
    t_cur = t_enter
    cap = out_vox.shape[0]
    while t_cur < t_exit:
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            t_next = tmax_x
            axis = 0
        elif tmax_y <= tmax_z:
            t_next = tmax_y
            axis = 1
        else:
            t_next = tmax_z
            axis = 2
        t1 = t_next if t_next < t_exit else t_exit
        if t1 > t_cur and n < cap:
            out_vox[n, 0] = ix
            out_vox[n, 1] = iy
            out_vox[n, 2] = iz
            out_t[n, 0] = t_cur
            out_t[n, 1] = t1
            n += 1
        t_cur = t1
        if axis == 0:
            ix += step_x
            tmax_x += tdel_x
            if ix < ilo or ix > ihx:
                break
        elif axis == 1:
            iy += step_y
            tmax_y += tdel_y
            if iy < ilo or iy > ihy:
                break
        else:
            iz += step_z
            tmax_z += tdel_z
            if iz < ilo or iz > ihz:
                break
    return n


# --- hit ordering ---------------------------------------------------------------

@njit(cache=True, fastmath=False)
def _hit_before(t_a, vox_a, lid_a, kind_a, t_b, vox_b, lid_b, kind_b):
    """Total order shared with the oracle: (t_in, home voxel, lid, kind)."""
    if t_a != t_b:
        return t_a < t_b
    if vox_a != vox_b:
        return vox_a < vox_b
    if lid_a != lid_b:
        return lid_a < lid_b
    return kind_a < kind_b


@njit(cache=True, fastmath=False)
def _insertion_sort_hits(lo, hi, h_t, h_tout, h_vox, h_lid, h_attr, h_kind,
                         h_n, h_c):
    for i in range(lo + 1, hi):
        t = h_t[i]
        to = h_tout[i]
        v = h_vox[i]
        li = h_lid[i]
        at = h_attr[i]
        k = h_kind[i]
        n0, n1, n2 = h_n[i, 0], h_n[i, 1], h_n[i, 2]
        c0, c1, c2 = h_c[i, 0], h_c[i, 1], h_c[i, 2]
        j = i - 1
        while j >= lo and _hit_before(t, v, li, k, h_t[j], h_vox[j], h_lid[j], h_kind[j]):
            h_t[j + 1] = h_t[j]
            h_tout[j + 1] = h_tout[j]
            h_vox[j + 1] = h_vox[j]
            h_lid[j + 1] = h_lid[j]
            h_attr[j + 1] = h_attr[j]
            h_kind[j + 1] = h_kind[j]
            h_n[j + 1, 0] = h_n[j, 0]
            h_n[j + 1, 1] = h_n[j, 1]
            h_n[j + 1, 2] = h_n[j, 2]
            h_c[j + 1, 0] = h_c[j, 0]
            h_c[j + 1, 1] = h_c[j, 1]
            h_c[j + 1, 2] = h_c[j, 2]
            j -= 1
        h_t[j + 1] = t
        h_tout[j + 1] = to
        h_vox[j + 1] = v
        h_lid[j + 1] = li
        h_attr[j + 1] = at
        h_kind[j + 1] = k
        h_n[j + 1, 0] = n0
        h_n[j + 1, 1] = n1
        h_n[j + 1, 2] = n2
        h_c[j + 1, 0] = c0
        h_c[j + 1, 1] = c1
        h_c[j + 1, 2] = c2


# --- shading ----------------------------------------------------------------------

@njit(cache=True, fastmath=False)
def shade_scalar(nx, ny, nz, lx, ly, lz, vx, vy, vz, ka, kd, ks, shininess):
    """Blinn-style local shading scale with unit normal/light/view vectors."""
    ndl = nx * lx + ny * ly + nz * lz
    if ndl < 0.0:
        ndl = 0.0
    hx, hy, hz = lx + vx, ly + vy, lz + vz
    hn = np.sqrt(hx * hx + hy * hy + hz * hz)
    spec = 0.0
    if hn > 1e-12:
        ndh = (nx * hx + ny * hy + nz * hz) / hn
        if ndh > 0.0:
            spec = ndh ** shininess
    return ka + kd * ndl + ks * spec


@njit(cache=True, fastmath=False)
def _alpha_of(opacity_mode, base_alpha, table_alpha, t_in, t_out):
    if opacity_mode == OPACITY_CONSTANT:
        return base_alpha
    if opacity_mode == OPACITY_TRANSFER:
        return table_alpha
    span = t_out - t_in
    if span < 0.0:
        span = 0.0
    return 1.0 - (1.0 - base_alpha) ** span


# --- density / AO sampling -------------------------------------------------------

@njit(cache=True, fastmath=False)
def sample_field_trilinear(flat, off, ldx, ldy, ldz, scale, x, y, z):
    """Trilinear sample of a cell-centered field stored in a flat buffer.

    Cells are `scale` grid units wide; queries clamp to the field edge.
    """
    qx = x / scale - 0.5
    qy = y / scale - 0.5
    qz = z / scale - 0.5
    bx = int(np.floor(qx))
    by = int(np.floor(qy))
    bz = int(np.floor(qz))
    fx = qx - bx
    fy = qy - by
    fz = qz - bz
    x0 = min(max(bx, 0), ldx - 1)
    x1 = min(max(bx + 1, 0), ldx - 1)
    y0 = min(max(by, 0), ldy - 1)
    y1 = min(max(by + 1, 0), ldy - 1)
    z0 = min(max(bz, 0), ldz - 1)
    z1 = min(max(bz + 1, 0), ldz - 1)
    stride_y = ldx
    stride_z = ldx * ldy
    v000 = flat[off + z0 * stride_z + y0 * stride_y + x0]
    v001 = flat[off + z0 * stride_z + y0 * stride_y + x1]
    v010 = flat[off + z0 * stride_z + y1 * stride_y + x0]
    v011 = flat[off + z0 * stride_z + y1 * stride_y + x1]
    v100 = flat[off + z1 * stride_z + y0 * stride_y + x0]
    v101 = flat[off + z1 * stride_z + y0 * stride_y + x1]
    v110 = flat[off + z1 * stride_z + y1 * stride_y + x0]
    v111 = flat[off + z1 * stride_z + y1 * stride_y + x1]
    c00 = v000 * (1.0 - fx) + v001 * fx
    c01 = v010 * (1.0 - fx) + v011 * fx
    c10 = v100 * (1.0 - fx) + v101 * fx
    c11 = v110 * (1.0 - fx) + v111 * fx
    c0 = c00 * (1.0 - fy) + c01 * fy
    c1 = c10 * (1.0 - fy) + c11 * fy
    return c0 * (1.0 - fz) + c1 * fz


@njit(cache=True, fastmath=False)
def cone_blocking(px, py, pz, lx, ly, lz,
                  oct_flat, oct_off, oct_dims, n_levels,
                  gx, gy, gz, eps_T):
    """March toward the light, sampling ever coarser density levels so the
    sample footprint tracks a cone one voxel wide at distance 1."""
    t_cur = 0.5
    T = 1.0
    max_d = np.sqrt(float(gx * gx + gy * gy + gz * gz))
    while t_cur < max_d:
        x = px + t_cur * lx
        y = py + t_cur * ly
        z = pz + t_cur * lz
        if x < 0.0 or y < 0.0 or z < 0.0 or x > gx or y > gy or z > gz:
            break
        width = t_cur  # 2*d*tan(theta/2) with the cone one voxel wide at d=1
        if width < 1.0:
            width = 1.0
        level = int(np.floor(np.log2(width)))
        if level < 0:
            level = 0
        if level > n_levels - 1:
            level = n_levels - 1
        step = float(1 << level)
        rho = sample_field_trilinear(
            oct_flat, oct_off[level],
            oct_dims[level, 0], oct_dims[level, 1], oct_dims[level, 2],
            step, x, y, z)
        ext = 1.0 - rho * step
        if ext < 0.0:
            ext = 0.0
        T *= ext
        if T <= eps_T:
            T = 0.0
            break
        t_cur += step
    return 1.0 - T


@njit(cache=True, fastmath=False)
def density_ray_blocking(px, py, pz, dx, dy, dz,
                         oct_flat, oct_off, oct_dims,
                         gx, gy, gz, radius, step):
    """Accumulate level-0 density along one ray until saturation (sum >= 1),
    the influence radius, or the grid edge; returns min(1, sum)."""
    acc = 0.0
    t_cur = step
    while t_cur <= radius:
        x = px + t_cur * dx
        y = py + t_cur * dy
        z = pz + t_cur * dz
        if x < 0.0 or y < 0.0 or z < 0.0 or x > gx or y > gy or z > gz:
            break
        acc += sample_field_trilinear(
            oct_flat, oct_off[0], oct_dims[0, 0], oct_dims[0, 1], oct_dims[0, 2],
            1.0, x, y, z) * step
        if acc >= 1.0:
            return 1.0
        t_cur += step
    return acc if acc < 1.0 else 1.0


# --- occlusion rays ------------------------------------------------------------------

@njit(cache=True, fastmath=False)
def geometry_ray_blocked(ox, oy, oz, dx, dy, dz, max_t,
                         rx, ry, rz, counts, offsets,
                         seg_a, seg_b, radius, joints):
    """True if any tube (or joint sphere) lies on the ray strictly before
    max_t.  Walks the padded grid and tests own+neighbor voxels, so it finds
    everything the primary renderer would."""
    out_vox = np.empty((rx + ry + rz + 12, 3), dtype=np.int64)
    out_t = np.empty((rx + ry + rz + 12, 2), dtype=np.float64)
    n = dda_collect(ox, oy, oz, dx, dy, dz, rx, ry, rz, 1, out_vox, out_t)
    for w in range(n):
        if out_t[w, 0] >= max_t:
            break
        wx, wy, wz = out_vox[w, 0], out_vox[w, 1], out_vox[w, 2]
        for nz_ in range(wz - 1, wz + 2):
            if nz_ < 0 or nz_ >= rz:
                continue
            for ny_ in range(wy - 1, wy + 2):
                if ny_ < 0 or ny_ >= ry:
                    continue
                for nx_ in range(wx - 1, wx + 2):
                    if nx_ < 0 or nx_ >= rx:
                        continue
                    lin = nx_ + rx * (ny_ + ry * nz_)
                    cnt = counts[lin]
                    if cnt == 0:
                        continue
                    base = offsets[lin]
                    for s in range(cnt):
                        i = base + s
                        ax, ay, az = float(seg_a[i, 0]), float(seg_a[i, 1]), float(seg_a[i, 2])
                        bx, by, bz = float(seg_b[i, 0]), float(seg_b[i, 1]), float(seg_b[i, 2])
                        hit, t_in, _, _, _, _ = intersect_tube_raw(
                            ox, oy, oz, dx, dy, dz, ax, ay, az, bx, by, bz, radius)
                        if hit and 1e-9 < t_in < max_t:
                            return True
                        if joints != 0:
                            hit, t_in, _, _, _, _ = intersect_sphere_raw(
                                ox, oy, oz, dx, dy, dz, ax, ay, az, radius)
                            if hit and 1e-9 < t_in < max_t:
                                return True
                            hit, t_in, _, _, _, _ = intersect_sphere_raw(
                                ox, oy, oz, dx, dy, dz, bx, by, bz, radius)
                            if hit and 1e-9 < t_in < max_t:
                                return True
    return False


@njit(cache=True, fastmath=False)
def replines_ray_blocked(ox, oy, oz, dx, dy, dz, max_t,
                         ldx, ldy, ldz, level_size,
                         rep_valid, rep_a, rep_b, rep_w,
                         radius_base):
    """Shadow test against one representative line per coarse voxel, with the
    radius scaled by the aggregated thickness weight (clamped to [1, 4])."""
    out_vox = np.empty((ldx + ldy + ldz + 12, 3), dtype=np.int64)
    out_t = np.empty((ldx + ldy + ldz + 12, 2), dtype=np.float64)
    sx, sy, sz = ox / level_size, oy / level_size, oz / level_size
    n = dda_collect(sx, sy, sz, dx, dy, dz, ldx, ldy, ldz, 1, out_vox, out_t)
    for w in range(n):
        if out_t[w, 0] * level_size >= max_t:
            break
        wx, wy, wz = out_vox[w, 0], out_vox[w, 1], out_vox[w, 2]
        for nz_ in range(wz - 1, wz + 2):
            if nz_ < 0 or nz_ >= ldz:
                continue
            for ny_ in range(wy - 1, wy + 2):
                if ny_ < 0 or ny_ >= ldy:
                    continue
                for nx_ in range(wx - 1, wx + 2):
                    if nx_ < 0 or nx_ >= ldx:
                        continue
                    lin = nx_ + ldx * (ny_ + ldy * nz_)
                    if rep_valid[lin] == 0:
                        continue
                    wgt = rep_w[lin]
                    if wgt < 1.0:
                        wgt = 1.0
                    if wgt > 4.0:
                        wgt = 4.0
                    rr = radius_base * wgt
                    hit, t_in, _, _, _, _ = intersect_tube_raw(
                        ox, oy, oz, dx, dy, dz,
                        float(rep_a[lin, 0]), float(rep_a[lin, 1]), float(rep_a[lin, 2]),
                        float(rep_b[lin, 0]), float(rep_b[lin, 1]), float(rep_b[lin, 2]),
                        rr)
                    if hit and 1e-9 < t_in < max_t:
                        return True
    return False


@njit(cache=True, fastmath=False)
def fibonacci_dir(i, n, hemisphere, jitter):
    """Deterministic Fibonacci-lattice direction i of n on the (hemi)sphere
    around +z; `jitter` in [0, 1) rotates the lattice azimuthally."""
    golden = 2.399963229728653
    if hemisphere != 0:
        z = 1.0 - (i + 0.5) / n
    else:
        z = 1.0 - 2.0 * (i + 0.5) / n
    rho = np.sqrt(max(0.0, 1.0 - z * z))
    phi = golden * i + jitter * 6.283185307179586
    return rho * np.cos(phi), rho * np.sin(phi), z


@njit(cache=True, fastmath=False)
def orient_frame(nx, ny, nz):
    """Any orthonormal (t, b) completing the unit vector n."""
    if abs(nx) > 0.9:
        tx, ty, tz = 0.0, 1.0, 0.0
    else:
        tx, ty, tz = 1.0, 0.0, 0.0
    d = tx * nx + ty * ny + tz * nz
    tx, ty, tz = tx - d * nx, ty - d * ny, tz - d * nz
    tn = np.sqrt(tx * tx + ty * ty + tz * tz)
    tx, ty, tz = tx / tn, ty / tn, tz / tn
    bx = ny * tz - nz * ty
    by = nz * tx - nx * tz
    bz = nx * ty - ny * tx
    return tx, ty, tz, bx, by, bz


@njit(cache=True, fastmath=False)
def ao_hemisphere_point(px, py, pz, nx, ny, nz, n_rays, radius, jitter,
                        rx, ry, rz, counts, offsets, seg_a, seg_b, tube_r):
    blocked = 0
    tx, ty, tz, bx, by, bz = orient_frame(nx, ny, nz)
    for i in range(n_rays):
        lx, ly, lz = fibonacci_dir(i, n_rays, 1, jitter)
        dx = lx * tx + ly * bx + lz * nx
        dy = lx * ty + ly * by + lz * ny
        dz = lx * tz + ly * bz + lz * nz
        ox = px + 1e-3 * nx
        oy = py + 1e-3 * ny
        oz = pz + 1e-3 * nz
        if geometry_ray_blocked(ox, oy, oz, dx, dy, dz, radius,
                                rx, ry, rz, counts, offsets, seg_a, seg_b,
                                tube_r, 1):
            blocked += 1
    return blocked / n_rays


@njit(cache=True, fastmath=False)
def ao_density_point(px, py, pz, nx, ny, nz, n_rays, radius, step, hemisphere,
                     oct_flat, oct_off, oct_dims, gx, gy, gz):
    total = 0.0
    tx, ty, tz, bx, by, bz = orient_frame(nx, ny, nz)
    for i in range(n_rays):
        lx, ly, lz = fibonacci_dir(i, n_rays, hemisphere, 0.0)
        dx = lx * tx + ly * bx + lz * nx
        dy = lx * ty + ly * by + lz * ny
        dz = lx * tz + ly * bz + lz * nz
        total += density_ray_blocking(px, py, pz, dx, dy, dz,
                                      oct_flat, oct_off, oct_dims,
                                      gx, gy, gz, radius, step)
    return total / n_rays


@njit(cache=True, parallel=True, fastmath=False)
def precompute_ao_kernel(occupied, rx, ry, rz, n_rays, radius, step,
                         oct_flat, oct_off, oct_dims, out):
    for w in prange(occupied.shape[0]):
        lin = occupied[w]
        x = lin % rx
        y = (lin // rx) % ry
        z = lin // (rx * ry)
        out[lin] = ao_density_point(
            x + 0.5, y + 0.5, z + 0.5, 0.0, 0.0, 1.0,
            n_rays, radius, step, 0,
            oct_flat, oct_off, oct_dims,
            float(rx), float(ry), float(rz))


# --- compositing -----------------------------------------------------------------

@njit(cache=True, fastmath=False)
def _seen_check_and_mark(seen_key, seen_mask, n_seen, voxlin, lid):
    """Returns (suppressed, new_n_seen); sets the (voxel, lid) bit if clear."""
    bit = np.uint32(1) << np.uint32(lid)
    for i in range(n_seen):
        if seen_key[i] == voxlin:
            if seen_mask[i] & bit:
                return True, n_seen
            seen_mask[i] |= bit
            return False, n_seen
    if n_seen < seen_key.shape[0]:
        seen_key[n_seen] = voxlin
        seen_mask[n_seen] = bit
        return False, n_seen + 1
    return False, n_seen  # table full: give up de-duplication for this id


@njit(cache=True, fastmath=False)
def _sphere_seen(sph_c, n_sph, cx, cy, cz):
    for i in range(n_sph):
        if sph_c[i, 0] == cx and sph_c[i, 1] == cy and sph_c[i, 2] == cz:
            return True
    return False


@njit(cache=True, fastmath=False)
def stream_hit(acc, seen_key, seen_mask, n_seen, sph_c, n_sph,
               t_in, t_out, voxlin, lid, attr, kind, cx, cy, cz,
               nx, ny, nz, ox, oy, oz, ddx, ddy, ddz,
               table, opacity_mode, base_alpha,
               ka, kd, ks, shininess, headlight, light,
               shadow_mode, ao_mode,
               rx, ry, rz, counts, offsets, seg_a, seg_b, tube_r, joints,
               oct_flat, oct_off, oct_dims, oct_levels,
               rep_valid, rep_a, rep_b, rep_w, rep_dims, rep_size,
               shadow_radius_base, ao_flat, ao_n_rays, ao_radius):
    """Apply one ordered hit to the per-pixel state; both renderers call this
    for every owned hit in the shared total order.

    Returns (n_seen, n_sph, accumulated_alpha).
    """
    if kind == KIND_SPHERE and _sphere_seen(sph_c, n_sph, cx, cy, cz):
        return n_seen, n_sph, acc[3]
    sup, n_seen = _seen_check_and_mark(seen_key, seen_mask, n_seen, voxlin, lid)
    if sup:
        return n_seen, n_sph, acc[3]

    gx, gy, gz = float(rx), float(ry), float(rz)
    px = ox + t_in * ddx
    py = oy + t_in * ddy
    pz = oz + t_in * ddz
    shadow_term = 0.0
    if shadow_mode == SHADOW_HARD:
        if geometry_ray_blocked(px + 1e-3 * nx, py + 1e-3 * ny, pz + 1e-3 * nz,
                                light[0], light[1], light[2], 1e30,
                                rx, ry, rz, counts, offsets, seg_a, seg_b,
                                tube_r, joints):
            shadow_term = 1.0
    elif shadow_mode == SHADOW_REPLINES:
        if replines_ray_blocked(px + 1e-3 * nx, py + 1e-3 * ny, pz + 1e-3 * nz,
                                light[0], light[1], light[2], 1e30,
                                rep_dims[0], rep_dims[1], rep_dims[2], rep_size,
                                rep_valid, rep_a, rep_b, rep_w,
                                shadow_radius_base):
            shadow_term = 1.0
    elif shadow_mode == SHADOW_CONE:
        shadow_term = cone_blocking(px, py, pz, light[0], light[1], light[2],
                                    oct_flat, oct_off, oct_dims, oct_levels,
                                    gx, gy, gz, 0.01)
    ao_term = 0.0
    if ao_mode == AO_PRECOMPUTED:
        ao_term = sample_field_trilinear(ao_flat, 0, rx, ry, rz, 1.0, px, py, pz)
        if ao_term > 1.0:
            ao_term = 1.0
        if ao_term < 0.0:
            ao_term = 0.0
    elif ao_mode == AO_DENSITY:
        ao_term = ao_density_point(px, py, pz, nx, ny, nz,
                                   ao_n_rays, ao_radius, 1.0, 1,
                                   oct_flat, oct_off, oct_dims, gx, gy, gz)
    elif ao_mode == AO_HEMISPHERE:
        ao_term = ao_hemisphere_point(px, py, pz, nx, ny, nz,
                                      ao_n_rays, ao_radius, 0.0,
                                      rx, ry, rz, counts, offsets,
                                      seg_a, seg_b, tube_r)

    alpha = _alpha_of(opacity_mode, base_alpha, float(table[attr, 3]), t_in, t_out)
    if headlight != 0:
        lgx, lgy, lgz = -ddx, -ddy, -ddz
    else:
        lgx, lgy, lgz = light[0], light[1], light[2]
    scale = shade_scalar(nx, ny, nz, lgx, lgy, lgz, -ddx, -ddy, -ddz,
                         ka * (1.0 - ao_term), kd, ks, shininess)
    scale *= 1.0 - shadow_term
    trans = 1.0 - acc[3]
    w = trans * alpha
    acc[0] += w * scale * float(table[attr, 0])
    acc[1] += w * scale * float(table[attr, 1])
    acc[2] += w * scale * float(table[attr, 2])
    acc[3] += w
    if kind == KIND_SPHERE and n_sph < sph_c.shape[0]:
        sph_c[n_sph, 0] = cx
        sph_c[n_sph, 1] = cy
        sph_c[n_sph, 2] = cz
        n_sph += 1
    return n_seen, n_sph, acc[3]


# --- full-frame kernels -----------------------------------------------------------

@njit(cache=True, parallel=True, fastmath=False)
def render_rows(
    cam_o, cam_r, cam_u, cam_f, tan_half, aspect, width, height,
    rx, ry, rz, counts, offsets, seg_a, seg_b, seg_attr, seg_lid, table,
    occ_dilated,
    tube_r, opacity_mode, base_alpha, tau, neighbor, joints,
    ka, kd, ks, shininess, headlight, light, bg,
    shadow_mode, ao_mode,
    oct_flat, oct_off, oct_dims, oct_levels,
    rep_valid, rep_a, rep_b, rep_w, rep_dims, rep_size, shadow_radius_base,
    ao_flat, ao_n_rays, ao_radius,
    img, row_stats,
):
    pad = 1 if neighbor != 0 else 0
    max_windows = rx + ry + rz + 3 * (2 * pad + 3)
    for y in prange(height):
        w_vox = np.empty((max_windows, 3), dtype=np.int64)
        w_t = np.empty((max_windows, 2), dtype=np.float64)
        h_t = np.empty(MAX_WINDOW_HITS, dtype=np.float64)
        h_tout = np.empty(MAX_WINDOW_HITS, dtype=np.float64)
        h_vox = np.empty(MAX_WINDOW_HITS, dtype=np.int64)
        h_lid = np.empty(MAX_WINDOW_HITS, dtype=np.int64)
        h_attr = np.empty(MAX_WINDOW_HITS, dtype=np.int64)
        h_kind = np.empty(MAX_WINDOW_HITS, dtype=np.int64)
        h_n = np.empty((MAX_WINDOW_HITS, 3), dtype=np.float64)
        h_c = np.empty((MAX_WINDOW_HITS, 3), dtype=np.float32)
        seen_key = np.empty(MAX_SEEN, dtype=np.int64)
        seen_mask = np.empty(MAX_SEEN, dtype=np.uint32)
        sph_c = np.empty((MAX_SEEN, 3), dtype=np.float32)
        acc = np.empty(4, dtype=np.float64)
        steps = 0
        tests = 0
        overflow = 0
        for x in range(width):
            ndc_x = ((x + 0.5) / width * 2.0 - 1.0) * tan_half * aspect
            ndc_y = (1.0 - (y + 0.5) / height * 2.0) * tan_half
            ddx = cam_f[0] + ndc_x * cam_r[0] + ndc_y * cam_u[0]
            ddy = cam_f[1] + ndc_x * cam_r[1] + ndc_y * cam_u[1]
            ddz = cam_f[2] + ndc_x * cam_r[2] + ndc_y * cam_u[2]
            dn = np.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
            ddx, ddy, ddz = ddx / dn, ddy / dn, ddz / dn
            ox, oy, oz = cam_o[0], cam_o[1], cam_o[2]

            acc[0] = 0.0
            acc[1] = 0.0
            acc[2] = 0.0
            acc[3] = 0.0
            n_seen = 0
            n_sph = 0

            nw = dda_collect(ox, oy, oz, ddx, ddy, ddz, rx, ry, rz, pad, w_vox, w_t)
            steps += nw
            done = False
            for w in range(nw):
                if done:
                    break
                wx, wy, wz = w_vox[w, 0], w_vox[w, 1], w_vox[w, 2]
                # cheap skip: nothing to gather anywhere near this voxel
                if neighbor != 0:
                    if occ_dilated[(wz + 1) * (ry + 2) * (rx + 2)
                                   + (wy + 1) * (rx + 2) + (wx + 1)] == 0:
                        continue
                else:
                    if counts[wx + rx * (wy + ry * wz)] == 0:
                        continue
                t0 = w_t[w, 0]
                t1 = w_t[w, 1]
                nh = 0
                if neighbor != 0:
                    zlo, zhi = wz - 1, wz + 2
                    ylo, yhi = wy - 1, wy + 2
                    xlo, xhi = wx - 1, wx + 2
                else:
                    zlo, zhi = wz, wz + 1
                    ylo, yhi = wy, wy + 1
                    xlo, xhi = wx, wx + 1
                for nz_ in range(zlo, zhi):
                    if nz_ < 0 or nz_ >= rz:
                        continue
                    for ny_ in range(ylo, yhi):
                        if ny_ < 0 or ny_ >= ry:
                            continue
                        for nx_ in range(xlo, xhi):
                            if nx_ < 0 or nx_ >= rx:
                                continue
                            lin = nx_ + rx * (ny_ + ry * nz_)
                            cnt = counts[lin]
                            if cnt == 0:
                                continue
                            base = offsets[lin]
                            for s in range(cnt):
                                i = base + s
                                ax = float(seg_a[i, 0])
                                ay = float(seg_a[i, 1])
                                az = float(seg_a[i, 2])
                                bx = float(seg_b[i, 0])
                                by = float(seg_b[i, 1])
                                bz = float(seg_b[i, 2])
                                tests += 1
                                hit, t_in, t_out, nx0, ny0, nz0 = intersect_tube_raw(
                                    ox, oy, oz, ddx, ddy, ddz,
                                    ax, ay, az, bx, by, bz, tube_r)
                                if hit and t0 <= t_in < t1:
                                    if nh < MAX_WINDOW_HITS:
                                        h_t[nh] = t_in
                                        h_tout[nh] = t_out
                                        h_vox[nh] = lin
                                        h_lid[nh] = seg_lid[i]
                                        h_attr[nh] = seg_attr[i]
                                        h_kind[nh] = KIND_TUBE
                                        h_n[nh, 0] = nx0
                                        h_n[nh, 1] = ny0
                                        h_n[nh, 2] = nz0
                                        h_c[nh, 0] = 0.0
                                        h_c[nh, 1] = 0.0
                                        h_c[nh, 2] = 0.0
                                        nh += 1
                                    else:
                                        overflow += 1
                                if joints != 0:
                                    tests += 2
                                    hit, t_in, t_out, nx0, ny0, nz0 = intersect_sphere_raw(
                                        ox, oy, oz, ddx, ddy, ddz, ax, ay, az, tube_r)
                                    if hit and t0 <= t_in < t1:
                                        if nh < MAX_WINDOW_HITS:
                                            h_t[nh] = t_in
                                            h_tout[nh] = t_out
                                            h_vox[nh] = lin
                                            h_lid[nh] = seg_lid[i]
                                            h_attr[nh] = seg_attr[i]
                                            h_kind[nh] = KIND_SPHERE
                                            h_n[nh, 0] = nx0
                                            h_n[nh, 1] = ny0
                                            h_n[nh, 2] = nz0
                                            h_c[nh, 0] = seg_a[i, 0]
                                            h_c[nh, 1] = seg_a[i, 1]
                                            h_c[nh, 2] = seg_a[i, 2]
                                            nh += 1
                                        else:
                                            overflow += 1
                                    hit, t_in, t_out, nx0, ny0, nz0 = intersect_sphere_raw(
                                        ox, oy, oz, ddx, ddy, ddz, bx, by, bz, tube_r)
                                    if hit and t0 <= t_in < t1:
                                        if nh < MAX_WINDOW_HITS:
                                            h_t[nh] = t_in
                                            h_tout[nh] = t_out
                                            h_vox[nh] = lin
                                            h_lid[nh] = seg_lid[i]
                                            h_attr[nh] = seg_attr[i]
                                            h_kind[nh] = KIND_SPHERE
                                            h_n[nh, 0] = nx0
                                            h_n[nh, 1] = ny0
                                            h_n[nh, 2] = nz0
                                            h_c[nh, 0] = seg_b[i, 0]
                                            h_c[nh, 1] = seg_b[i, 1]
                                            h_c[nh, 2] = seg_b[i, 2]
                                            nh += 1
                                        else:
                                            overflow += 1
                if nh == 0:
                    continue
                _insertion_sort_hits(0, nh, h_t, h_tout, h_vox, h_lid, h_attr,
                                     h_kind, h_n, h_c)
                for k in range(nh):
                    n_seen, n_sph, a_now = stream_hit(
                        acc, seen_key, seen_mask, n_seen, sph_c, n_sph,
                        h_t[k], h_tout[k], h_vox[k], h_lid[k], h_attr[k],
                        h_kind[k], h_c[k, 0], h_c[k, 1], h_c[k, 2],
                        h_n[k, 0], h_n[k, 1], h_n[k, 2],
                        ox, oy, oz, ddx, ddy, ddz,
                        table, opacity_mode, base_alpha,
                        ka, kd, ks, shininess, headlight, light,
                        shadow_mode, ao_mode,
                        rx, ry, rz, counts, offsets, seg_a, seg_b, tube_r, joints,
                        oct_flat, oct_off, oct_dims, oct_levels,
                        rep_valid, rep_a, rep_b, rep_w, rep_dims, rep_size,
                        shadow_radius_base, ao_flat, ao_n_rays, ao_radius)
                    if a_now >= tau:
                        done = True
                        break

            a = acc[3]
            img[y, x, 0] = np.float32(acc[0] + (1.0 - a) * bg[3] * bg[0])
            img[y, x, 1] = np.float32(acc[1] + (1.0 - a) * bg[3] * bg[1])
            img[y, x, 2] = np.float32(acc[2] + (1.0 - a) * bg[3] * bg[2])
            img[y, x, 3] = np.float32(a + (1.0 - a) * bg[3])
        row_stats[y, 0] = steps
        row_stats[y, 1] = tests
        row_stats[y, 2] = overflow


@njit(cache=True, parallel=True, fastmath=False)
def oracle_rows(
    cam_o, cam_r, cam_u, cam_f, tan_half, aspect, width, height,
    rx, ry, rz, counts, offsets, seg_a, seg_b, seg_attr, seg_lid, seg_voxlin,
    seg_mid, seg_rej2, table,
    tube_r, opacity_mode, base_alpha, tau, joints,
    ka, kd, ks, shininess, headlight, light, bg,
    shadow_mode, ao_mode,
    oct_flat, oct_off, oct_dims, oct_levels,
    rep_valid, rep_a, rep_b, rep_w, rep_dims, rep_size, shadow_radius_base,
    ao_flat, ao_n_rays, ao_radius,
    img, row_stats,
):
    """Reference image: every primitive tested against every pixel, hits
    sorted globally, then streamed through the shared compositor.  A segment
    may be skipped only by a conservative ray/line distance bound that cannot
    discard a true capsule hit."""
    n_seg = seg_a.shape[0]
    for y in prange(height):
        h_t = np.empty(MAX_PIXEL_HITS, dtype=np.float64)
        h_tout = np.empty(MAX_PIXEL_HITS, dtype=np.float64)
        h_vox = np.empty(MAX_PIXEL_HITS, dtype=np.int64)
        h_lid = np.empty(MAX_PIXEL_HITS, dtype=np.int64)
        h_attr = np.empty(MAX_PIXEL_HITS, dtype=np.int64)
        h_kind = np.empty(MAX_PIXEL_HITS, dtype=np.int64)
        h_n = np.empty((MAX_PIXEL_HITS, 3), dtype=np.float64)
        h_c = np.empty((MAX_PIXEL_HITS, 3), dtype=np.float32)
        seen_key = np.empty(MAX_SEEN, dtype=np.int64)
        seen_mask = np.empty(MAX_SEEN, dtype=np.uint32)
        sph_c = np.empty((MAX_SEEN, 3), dtype=np.float32)
        acc = np.empty(4, dtype=np.float64)
        overflow = 0
        for x in range(width):
            ndc_x = ((x + 0.5) / width * 2.0 - 1.0) * tan_half * aspect
            ndc_y = (1.0 - (y + 0.5) / height * 2.0) * tan_half
            ddx = cam_f[0] + ndc_x * cam_r[0] + ndc_y * cam_u[0]
            ddy = cam_f[1] + ndc_x * cam_r[1] + ndc_y * cam_u[1]
            ddz = cam_f[2] + ndc_x * cam_r[2] + ndc_y * cam_u[2]
            dn = np.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
            ddx, ddy, ddz = ddx / dn, ddy / dn, ddz / dn
            ox, oy, oz = cam_o[0], cam_o[1], cam_o[2]

            nh = 0
            for i in range(n_seg):
                # distance from the ray line to the segment midpoint bounds
                # the distance to every capsule point from below
                wx = seg_mid[i, 0] - ox
                wy = seg_mid[i, 1] - oy
                wz = seg_mid[i, 2] - oz
                cxd = wy * ddz - wz * ddy
                cyd = wz * ddx - wx * ddz
                czd = wx * ddy - wy * ddx
                if cxd * cxd + cyd * cyd + czd * czd > seg_rej2[i]:
                    continue
                ax = float(seg_a[i, 0])
                ay = float(seg_a[i, 1])
                az = float(seg_a[i, 2])
                bx = float(seg_b[i, 0])
                by = float(seg_b[i, 1])
                bz = float(seg_b[i, 2])
                hit, t_in, t_out, nx0, ny0, nz0 = intersect_tube_raw(
                    ox, oy, oz, ddx, ddy, ddz, ax, ay, az, bx, by, bz, tube_r)
                if hit:
                    if nh < MAX_PIXEL_HITS:
                        h_t[nh] = t_in
                        h_tout[nh] = t_out
                        h_vox[nh] = seg_voxlin[i]
                        h_lid[nh] = seg_lid[i]
                        h_attr[nh] = seg_attr[i]
                        h_kind[nh] = KIND_TUBE
                        h_n[nh, 0] = nx0
                        h_n[nh, 1] = ny0
                        h_n[nh, 2] = nz0
                        h_c[nh, 0] = 0.0
                        h_c[nh, 1] = 0.0
                        h_c[nh, 2] = 0.0
                        nh += 1
                    else:
                        overflow += 1
                if joints != 0:
                    hit, t_in, t_out, nx0, ny0, nz0 = intersect_sphere_raw(
                        ox, oy, oz, ddx, ddy, ddz, ax, ay, az, tube_r)
                    if hit:
                        if nh < MAX_PIXEL_HITS:
                            h_t[nh] = t_in
                            h_tout[nh] = t_out
                            h_vox[nh] = seg_voxlin[i]
                            h_lid[nh] = seg_lid[i]
                            h_attr[nh] = seg_attr[i]
                            h_kind[nh] = KIND_SPHERE
                            h_n[nh, 0] = nx0
                            h_n[nh, 1] = ny0
                            h_n[nh, 2] = nz0
                            h_c[nh, 0] = seg_a[i, 0]
                            h_c[nh, 1] = seg_a[i, 1]
                            h_c[nh, 2] = seg_a[i, 2]
                            nh += 1
                        else:
                            overflow += 1
                    hit, t_in, t_out, nx0, ny0, nz0 = intersect_sphere_raw(
                        ox, oy, oz, ddx, ddy, ddz, bx, by, bz, tube_r)
                    if hit:
                        if nh < MAX_PIXEL_HITS:
                            h_t[nh] = t_in
                            h_tout[nh] = t_out
                            h_vox[nh] = seg_voxlin[i]
                            h_lid[nh] = seg_lid[i]
                            h_attr[nh] = seg_attr[i]
                            h_kind[nh] = KIND_SPHERE
                            h_n[nh, 0] = nx0
                            h_n[nh, 1] = ny0
                            h_n[nh, 2] = nz0
                            h_c[nh, 0] = seg_b[i, 0]
                            h_c[nh, 1] = seg_b[i, 1]
                            h_c[nh, 2] = seg_b[i, 2]
                            nh += 1
                        else:
                            overflow += 1

            _insertion_sort_hits(0, nh, h_t, h_tout, h_vox, h_lid, h_attr,
                                 h_kind, h_n, h_c)

            acc[0] = 0.0
            acc[1] = 0.0
            acc[2] = 0.0
            acc[3] = 0.0
            n_seen = 0
            n_sph = 0
            for k in range(nh):
                n_seen, n_sph, a_now = stream_hit(
                    acc, seen_key, seen_mask, n_seen, sph_c, n_sph,
                    h_t[k], h_tout[k], h_vox[k], h_lid[k], h_attr[k],
                    h_kind[k], h_c[k, 0], h_c[k, 1], h_c[k, 2],
                    h_n[k, 0], h_n[k, 1], h_n[k, 2],
                    ox, oy, oz, ddx, ddy, ddz,
                    table, opacity_mode, base_alpha,
                    ka, kd, ks, shininess, headlight, light,
                    shadow_mode, ao_mode,
                    rx, ry, rz, counts, offsets, seg_a, seg_b, tube_r, joints,
                    oct_flat, oct_off, oct_dims, oct_levels,
                    rep_valid, rep_a, rep_b, rep_w, rep_dims, rep_size,
                    shadow_radius_base, ao_flat, ao_n_rays, ao_radius)
                if a_now >= tau:
                    break

            a = acc[3]
            img[y, x, 0] = np.float32(acc[0] + (1.0 - a) * bg[3] * bg[0])
            img[y, x, 1] = np.float32(acc[1] + (1.0 - a) * bg[3] * bg[1])
            img[y, x, 2] = np.float32(acc[2] + (1.0 - a) * bg[3] * bg[2])
            img[y, x, 3] = np.float32(a + (1.0 - a) * bg[3])
        row_stats[y, 0] = 0
        # definitional: every primitive is tested against every pixel
        if joints != 0:
            row_stats[y, 1] = 3 * n_seg * width
        else:
            row_stats[y, 1] = n_seg * width
        row_stats[y, 2] = overflow

# --- geometry metrics -----------------------------------------------------------

@njit(cache=True, fastmath=False)
def nearest_segment_kernel(pts, qa, qb, dist, idx):
    """For every query point, the distance to the closest of the given
    segments and that segment's index.  Zero-length segments degrade to
    points."""
    for i in range(pts.shape[0]):
        px = pts[i, 0]
        py = pts[i, 1]
        pz = pts[i, 2]
        best = 1.0e300
        bj = -1
        for j in range(qa.shape[0]):
            ax = qa[j, 0]
            ay = qa[j, 1]
            az = qa[j, 2]
            ex = qb[j, 0] - ax
            ey = qb[j, 1] - ay
            ez = qb[j, 2] - az
            wx = px - ax
            wy = py - ay
            wz = pz - az
            ee = ex * ex + ey * ey + ez * ez
            if ee > 0.0:
                t = (wx * ex + wy * ey + wz * ez) / ee
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            else:
                t = 0.0
            rx = wx - t * ex
            ry = wy - t * ey
            rz = wz - t * ez
            d2 = rx * rx + ry * ry + rz * rz
            if d2 < best:
                best = d2
                bj = j
        dist[i] = np.sqrt(best)
        idx[i] = bj
