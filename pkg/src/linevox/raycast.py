"""Per-pixel ray casting over the two-level voxel model.

The module exposes small reference operations (traversal, tube/sphere tests,
gathering, compositing) that unit tests can poke at directly, plus
render_frame, which drives the parallel kernel.  Both paths share the same
compiled primitives, so the reference ops are the kernel, not a lookalike.
"""

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as _K
from .lod import (DensityOctree, RepLineField, build_octree, build_rep_lines,
                  compute_density_level0)
from .voxelizer import VoxelModel

_OPACITY_MODES = {
    "constant": _K.OPACITY_CONSTANT,
    "transfer": _K.OPACITY_TRANSFER,
    "distance-scaled": _K.OPACITY_DISTANCE,
}
_SHADOW_MODES = {
    "none": _K.SHADOW_NONE,
    "hard": _K.SHADOW_HARD,
    "replines": _K.SHADOW_REPLINES,
    "cone": _K.SHADOW_CONE,
}
_AO_MODES = {
    "none": _K.AO_NONE,
    "hemisphere-geometry": _K.AO_HEMISPHERE,
    "density-rays": _K.AO_DENSITY,
    "precomputed": _K.AO_PRECOMPUTED,
}
_KIND_NAMES = {_K.KIND_TUBE: "tube", _K.KIND_SPHERE: "joint-sphere"}


@dataclass
class Camera:
    """Pinhole camera in grid-local units; fov is vertical, in degrees."""

    position: Sequence[float]
    target: Sequence[float]
    up: Sequence[float] = (0.0, 0.0, 1.0)
    fov: float = 45.0
    width: int = 640
    height: int = 360

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if self.position.shape != (3,) or self.target.shape != (3,) or self.up.shape != (3,):
            raise ValueError("camera vectors must have 3 components")
        if not 0.0 < self.fov < 180.0:
            raise ValueError("fov must be in (0, 180) degrees")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dims must be >= 1")
        self.basis()  # validates up vs view direction

    def basis(self):
        """Right/up/forward unit vectors of the view frame."""
        fwd = self.target - self.position
        fn = np.linalg.norm(fwd)
        if fn < 1e-12:
            raise ValueError("camera position and target coincide")
        fwd = fwd / fn
        right = np.cross(fwd, self.up)
        rn = np.linalg.norm(right)
        if rn < 1e-9:
            raise ValueError("up vector is parallel to the view direction")
        right = right / rn
        up = np.cross(right, fwd)
        return right, up, fwd

    def ray(self, x: int, y: int):
        """Primary ray through the center of pixel (x, y); y runs downward."""
        right, up, fwd = self.basis()
        tan_half = np.tan(np.radians(self.fov) * 0.5)
        aspect = self.width / self.height
        ndc_x = ((x + 0.5) / self.width * 2.0 - 1.0) * tan_half * aspect
        ndc_y = (1.0 - (y + 0.5) / self.height * 2.0) * tan_half
        d = fwd + ndc_x * right + ndc_y * up
        d = d / np.linalg.norm(d)
        return self.position.copy(), d


@dataclass
class RenderParams:
    tube_radius: float = 0.3
    opacity_mode: str = "constant"
    base_opacity: float = 1.0
    tau: float = 0.95
    neighbor_mode: str = "auto"
    shadow_mode: str = "none"
    ao_mode: str = "none"
    background: Sequence[float] = (0.0, 0.0, 0.0, 1.0)
    joint_spheres: bool = True
    # headlight unless an explicit direction toward the light is given
    light_dir: Optional[Sequence[float]] = None
    ambient: float = 0.2
    diffuse: float = 0.7
    specular: float = 0.3
    shininess: float = 32.0
    ao_rays: int = 25
    ao_radius: float = 15.0
    shadow_rep_level: int = 2

    def __post_init__(self):
        if not 0.0 < self.tube_radius <= 0.5:
            raise ValueError("tube_radius must be in (0, 0.5] voxel units")
        if self.opacity_mode not in _OPACITY_MODES:
            raise ValueError("opacity_mode must be one of %s" % sorted(_OPACITY_MODES))
        if not 0.0 < self.base_opacity <= 1.0:
            raise ValueError("base_opacity must be in (0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.neighbor_mode not in ("off", "on", "auto"):
            raise ValueError("neighbor_mode must be off, on or auto")
        if self.shadow_mode not in _SHADOW_MODES:
            raise ValueError("shadow_mode must be one of %s" % sorted(_SHADOW_MODES))
        if self.ao_mode not in _AO_MODES:
            raise ValueError("ao_mode must be one of %s" % sorted(_AO_MODES))
        bg = np.asarray(self.background, dtype=np.float64)
        if bg.shape != (4,):
            raise ValueError("background must be RGBA")
        self.background = bg


@dataclass
class HitRecord:
    t_in: float
    t_out: float
    normal: np.ndarray
    voxel: Optional[tuple] = None
    local_line_id: int = 0
    attr_index: int = 0
    kind: str = "tube"


@dataclass
class Frame:
    image: np.ndarray  # (H, W, 4) float32, premultiplied RGBA in [0,1]
    stats: dict = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]

    def to_rgba8(self) -> np.ndarray:
        return np.clip(np.rint(self.image * 255.0), 0, 255).astype(np.uint8)


def _as_ray(ray):
    origin, direction = ray
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    n = np.linalg.norm(d)
    if n == 0.0:
        raise ValueError("ray direction must be non-zero")
    return o, d / n


def traverse_voxels(ray, spec, pad: int = 0):
    """Ordered (voxel, t_enter, t_exit) triples of the DDA walk; the t
    intervals tile the ray's in-grid span."""
    o, d = _as_ray(ray)
    dims = tuple(getattr(spec, "dims", spec))
    cap = dims[0] + dims[1] + dims[2] + 6 * (pad + 2)
    out_vox = np.empty((cap, 3), dtype=np.int64)
    out_t = np.empty((cap, 2), dtype=np.float64)
    n = _K.dda_collect(o[0], o[1], o[2], d[0], d[1], d[2],
                       dims[0], dims[1], dims[2], pad, out_vox, out_t)
    return [(tuple(int(v) for v in out_vox[i]), float(out_t[i, 0]), float(out_t[i, 1]))
            for i in range(n)]


def intersect_ray_tube(ray, a, b, radius: float) -> Optional[HitRecord]:
    """Slab-clipped cylinder test; degenerate segments fall back to the
    endpoint sphere so zero-length chords still render as a ball."""
    o, d = _as_ray(ray)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    if np.linalg.norm(b - a) < 1e-12:
        return intersect_ray_sphere(ray, a, radius)
    hit, t_in, t_out, nx, ny, nz = _K.intersect_tube_raw(
        o[0], o[1], o[2], d[0], d[1], d[2],
        a[0], a[1], a[2], b[0], b[1], b[2], radius)
    if not hit:
        return None
    return HitRecord(t_in=float(t_in), t_out=float(t_out),
                     normal=np.array([nx, ny, nz]), kind="tube")


def intersect_ray_sphere(ray, center, radius: float) -> Optional[HitRecord]:
    o, d = _as_ray(ray)
    c = np.asarray(center, dtype=np.float64)
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    hit, t_in, t_out, nx, ny, nz = _K.intersect_sphere_raw(
        o[0], o[1], o[2], d[0], d[1], d[2], c[0], c[1], c[2], radius)
    if not hit:
        return None
    return HitRecord(t_in=float(t_in), t_out=float(t_out),
                     normal=np.array([nx, ny, nz]), kind="joint-sphere")


def _hit_sort_key(model_dims, hit: HitRecord):
    rx, ry, _ = model_dims
    vx, vy, vz = hit.voxel
    lin = vx + rx * (vy + ry * vz)
    kind_rank = 0 if hit.kind == "tube" else 1
    return (hit.t_in, lin, hit.local_line_id, kind_rank)


def gather_voxel_hits(ray, voxel, model: VoxelModel, params: RenderParams,
                      seen: Optional[dict] = None, t_window=None):
    """Hits owned by `voxel`, in compositing order.

    `seen` maps voxel linear index -> bitmask of already composited line ids;
    matching hits are suppressed.  The caller updates the mask when it
    actually composites.  Ownership comes from the voxel's traversal window
    (computed here when not supplied); a voxel the ray never enters owns
    nothing.
    """
    o, d = _as_ray(ray)
    voxel = tuple(int(v) for v in voxel)
    dims = model.spec.dims
    if t_window is None:
        pad = 1 if params.neighbor_mode != "off" else 0
        for vox, t0, t1 in traverse_voxels((o, d), model.spec, pad=pad):
            if vox == voxel:
                t_window = (t0, t1)
                break
        if t_window is None:
            return []
    t0, t1 = t_window
    neighbor = params.neighbor_mode != "off"
    rx, ry, rz = dims
    span = 1 if neighbor else 0
    hits = []
    for nz in range(voxel[2] - span, voxel[2] + span + 1):
        if not 0 <= nz < rz:
            continue
        for ny in range(voxel[1] - span, voxel[1] + span + 1):
            if not 0 <= ny < ry:
                continue
            for nx in range(voxel[0] - span, voxel[0] + span + 1):
                if not 0 <= nx < rx:
                    continue
                lin = nx + rx * (ny + ry * nz)
                cnt = int(model.counts[lin])
                if cnt == 0:
                    continue
                base = int(model.offsets[lin])
                for s in range(base, base + cnt):
                    a = model.seg_a[s].astype(np.float64)
                    b = model.seg_b[s].astype(np.float64)
                    lid = int(model.seg_lid[s])
                    attr = int(model.seg_attr[s])
                    if seen is not None and (seen.get(lin, 0) >> lid) & 1:
                        continue
                    cands = [intersect_ray_tube((o, d), a, b, params.tube_radius)]
                    if params.joint_spheres:
                        cands.append(intersect_ray_sphere((o, d), a, params.tube_radius))
                        cands.append(intersect_ray_sphere((o, d), b, params.tube_radius))
                    for h in cands:
                        if h is None or not t0 <= h.t_in < t1:
                            continue
                        h.voxel = (nx, ny, nz)
                        h.local_line_id = lid
                        h.attr_index = attr
                        hits.append(h)
    hits.sort(key=lambda h: _hit_sort_key(dims, h))
    return hits


def shade_local(hit, light, view, ambient=0.2, diffuse=0.7, specular=0.3,
                shininess=32.0) -> float:
    """Local shading scale; `hit` may be a HitRecord or a bare normal."""
    n = np.asarray(getattr(hit, "normal", hit), dtype=np.float64)
    l = np.asarray(light, dtype=np.float64)
    v = np.asarray(view, dtype=np.float64)
    return float(_K.shade_scalar(n[0], n[1], n[2], l[0], l[1], l[2],
                                 v[0], v[1], v[2],
                                 ambient, diffuse, specular, shininess))


def composite(hits, params: RenderParams, transfer_table,
              ray_dir=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Front-to-back blend of pre-sorted hits; returns premultiplied RGBA.

    Stops once accumulated alpha reaches tau, then blends the background
    under the accumulated color.
    """
    table = np.asarray(transfer_table, dtype=np.float32)
    d = np.asarray(ray_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    view = -d
    if params.light_dir is None:
        light = view
    else:
        light = np.asarray(params.light_dir, dtype=np.float64)
        light = light / np.linalg.norm(light)
    mode = _OPACITY_MODES[params.opacity_mode]
    acc = np.zeros(4, dtype=np.float64)
    for h in hits:
        if mode == _K.OPACITY_CONSTANT:
            alpha = params.base_opacity
        elif mode == _K.OPACITY_TRANSFER:
            alpha = float(table[h.attr_index, 3])
        else:
            alpha = 1.0 - (1.0 - params.base_opacity) ** max(0.0, h.t_out - h.t_in)
        scale = shade_local(h, light, view, params.ambient, params.diffuse,
                            params.specular, params.shininess)
        w = (1.0 - acc[3]) * alpha
        acc[:3] += w * scale * table[h.attr_index, :3].astype(np.float64)
        acc[3] += w
        if acc[3] >= params.tau:
            break
    bg = params.background
    acc[:3] += (1.0 - acc[3]) * bg[3] * bg[:3]
    acc[3] += (1.0 - acc[3]) * bg[3]
    return acc


def _camera_args(camera: Camera):
    right, up, fwd = camera.basis()
    tan_half = float(np.tan(np.radians(camera.fov) * 0.5))
    aspect = camera.width / camera.height
    return (np.ascontiguousarray(camera.position), np.ascontiguousarray(right),
            np.ascontiguousarray(up), np.ascontiguousarray(fwd),
            tan_half, aspect, camera.width, camera.height)


def _model_args(model: VoxelModel):
    rx, ry, rz = model.spec.dims
    return (rx, ry, rz, model.counts, model.offsets, model.seg_a, model.seg_b,
            model.seg_attr, model.seg_lid,
            np.asarray(model.transfer_table, dtype=np.float32))


def _occupancy_dilated(model: VoxelModel) -> np.ndarray:
    """Flat uint8 map over the grid padded by one voxel: 1 where the voxel or
    any of its 26 in-grid neighbors holds segments.  Cached on the model."""
    cached = getattr(model, "_occ_dilated", None)
    if cached is not None:
        return cached
    rx, ry, rz = model.spec.dims
    occ = (model.counts.reshape(rz, ry, rx) > 0)
    dil = np.zeros((rz + 2, ry + 2, rx + 2), dtype=bool)
    for dz in range(3):
        for dy in range(3):
            for dx in range(3):
                dil[dz:dz + rz, dy:dy + ry, dx:dx + rx] |= occ
    flat = np.ascontiguousarray(dil.reshape(-1).astype(np.uint8))
    model._occ_dilated = flat
    return flat


def _octree_args(octree: Optional[DensityOctree]):
    if octree is None:
        return (np.zeros(1, dtype=np.float32), np.zeros(2, dtype=np.int64),
                np.ones((1, 3), dtype=np.int64), 1)
    cached = getattr(octree, "_flat_cache", None)
    if cached is not None:
        return cached
    offs = [0]
    dims = []
    parts = []
    for lvl in octree.levels:
        dz, dy, dx = lvl.shape
        dims.append((dx, dy, dz))
        parts.append(np.ascontiguousarray(lvl.reshape(-1)))
        offs.append(offs[-1] + lvl.size)
    flat = np.concatenate(parts).astype(np.float32)
    args = (flat, np.asarray(offs, dtype=np.int64),
            np.asarray(dims, dtype=np.int64), len(octree.levels))
    octree._flat_cache = args
    return args


def _rep_args(replines: Optional[RepLineField], model: VoxelModel, level: int):
    if replines is None:
        return (np.zeros(1, dtype=np.uint8), np.zeros((1, 3), dtype=np.float32),
                np.zeros((1, 3), dtype=np.float32), np.zeros(1, dtype=np.float32),
                np.ones(3, dtype=np.int64), 1.0)
    level = max(1, min(level, len(replines.levels) - 1))
    lvl = replines.levels[level]
    rx, ry, rz = model.spec.dims
    size = float(1 << level)
    dims = np.array([-(-rx // (1 << level)), -(-ry // (1 << level)),
                     -(-rz // (1 << level))], dtype=np.int64)
    return (lvl.valid.astype(np.uint8), lvl.a, lvl.b, lvl.weight, dims, size)


def _illum_args(params: RenderParams, model: VoxelModel,
                octree: Optional[DensityOctree],
                replines: Optional[RepLineField]):
    """Resolve mode codes and marshal the illumination-field arrays shared by
    the accelerated renderer and the reference renderer.  Keeping one
    marshaling path means a disagreement between the two can only come from
    traversal or gathering, never from argument plumbing."""
    shadow_mode = _SHADOW_MODES[params.shadow_mode]
    ao_mode = _AO_MODES[params.ao_mode]
    if shadow_mode == _K.SHADOW_CONE and octree is None:
        raise ValueError("cone shadows need a density octree")
    if shadow_mode == _K.SHADOW_REPLINES and replines is None:
        raise ValueError("replines shadows need a representative-line field")
    if ao_mode == _K.AO_DENSITY and octree is None:
        raise ValueError("density-rays AO needs a density octree")
    if ao_mode == _K.AO_PRECOMPUTED and getattr(model, "ao", None) is None:
        raise ValueError("precomputed AO requested but the model carries none")

    oct_args = _octree_args(octree)
    rep_args = _rep_args(replines, model, params.shadow_rep_level)
    shadow_radius_base = params.tube_radius * rep_args[5]

    if params.light_dir is None:
        headlight = 1
        light = np.zeros(3, dtype=np.float64)
    else:
        headlight = 0
        light = np.asarray(params.light_dir, dtype=np.float64)
        light = light / np.linalg.norm(light)
    ao = getattr(model, "ao", None)
    ao_flat = (np.ascontiguousarray(ao.reshape(-1), dtype=np.float32)
               if ao is not None else np.zeros(1, dtype=np.float32))
    return (shadow_mode, ao_mode, oct_args, rep_args, shadow_radius_base,
            headlight, light, ao_flat)


def default_camera(dims, width: int = 640, height: int = 360) -> Camera:
    """Camera that frames the whole grid: back off along -y, slightly
    elevated, aimed at the grid center."""
    center = np.asarray(dims, dtype=np.float64) * 0.5
    dist = 1.9 * float(max(dims))
    position = center + np.array([0.0, -dist, 0.42 * dist])
    return Camera(position=position, target=center, up=(0.0, 0.0, 1.0),
                  fov=45.0, width=width, height=height)


def ensure_lod(model: VoxelModel, octree: Optional[DensityOctree],
               replines: Optional[RepLineField], params: RenderParams):
    """Build whatever octree/representatives the requested shadow/AO modes
    need but the caller does not have yet.  Precomputed AO cannot be derived
    here; a missing field is an error pointing at the bake step."""
    need_octree = (params.shadow_mode == "cone" or params.ao_mode == "density-rays"
                   or (params.shadow_mode == "replines" and replines is None))
    if need_octree and octree is None:
        octree = build_octree(compute_density_level0(model))
    if params.shadow_mode == "replines" and replines is None:
        replines = build_rep_lines(model, octree)
    if params.ao_mode == "precomputed" and model.ao is None:
        raise ValueError(
            "the model carries no baked AO field; run `linevox precompute-ao` first")
    return octree, replines


def render_frame(camera: Camera, model: VoxelModel,
                 octree: Optional[DensityOctree] = None,
                 replines: Optional[RepLineField] = None,
                 params: Optional[RenderParams] = None,
                 workers: int = 1, moving: bool = False) -> Frame:
    """Render one frame; deterministic for any worker count.

    neighbor_mode=auto resolves to off while `moving` (interactive motion
    hint) and on otherwise.
    """
    if params is None:
        params = RenderParams()
    if params.neighbor_mode == "auto":
        neighbor = 0 if moving else 1
    else:
        neighbor = 1 if params.neighbor_mode == "on" else 0
    (shadow_mode, ao_mode,
     (oct_flat, oct_off, oct_dims, oct_levels),
     (rep_valid, rep_a, rep_b, rep_w, rep_dims, rep_size),
     shadow_radius_base, headlight, light, ao_flat) = _illum_args(
        params, model, octree, replines)

    cam = _camera_args(camera)
    mdl = _model_args(model)
    occ = _occupancy_dilated(model)

    img = np.zeros((camera.height, camera.width, 4), dtype=np.float32)
    row_stats = np.zeros((camera.height, 3), dtype=np.int64)
    eff = _K.set_threads(workers)
    t_start = time.perf_counter()
    _K.render_rows(
        *cam, *mdl, occ,
        float(params.tube_radius), _OPACITY_MODES[params.opacity_mode],
        float(params.base_opacity), float(params.tau), neighbor,
        1 if params.joint_spheres else 0,
        float(params.ambient), float(params.diffuse), float(params.specular),
        float(params.shininess), headlight, light,
        np.asarray(params.background, dtype=np.float64),
        shadow_mode, ao_mode,
        oct_flat, oct_off, oct_dims, oct_levels,
        rep_valid, rep_a, rep_b, rep_w, rep_dims, rep_size, shadow_radius_base,
        ao_flat, int(params.ao_rays), float(params.ao_radius),
        img, row_stats)
    ms = (time.perf_counter() - t_start) * 1000.0
    stats = {
        "rays": camera.width * camera.height,
        "voxel_steps": int(row_stats[:, 0].sum()),
        "intersection_tests": int(row_stats[:, 1].sum()),
        "ms": ms,
        "workers": eff,
        "window_overflow": int(row_stats[:, 2].sum()),
        "neighbor": bool(neighbor),
    }
    return Frame(image=img, stats=stats)
