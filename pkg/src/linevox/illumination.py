"""Shadow and ambient-occlusion queries over the voxel structures.

Four shadow/occlusion families share the compiled ray kernels the renderer
uses internally: hard shadow rays against the stored tubes, shadow rays
against coarse representative lines, cone-style marching through the density
pyramid, and three ambient-occlusion variants (hemisphere rays against
geometry, density-ray integration, and a precomputed per-voxel field sampled
trilinearly at run time).  All direction sets are deterministic Fibonacci
lattices, so identical inputs always give identical outputs.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as _K
from .lod import DensityOctree, RepLineField
from .raycast import _AO_MODES, _model_args, _octree_args
from .voxelizer import VoxelModel

__all__ = [
    "AOField",
    "AOParams",
    "ao_density_rays",
    "ao_hemisphere_geometry",
    "cone_soft_shadow",
    "hard_shadow",
    "precompute_voxel_ao",
    "replines_shadow",
    "sample_ao",
]


@dataclass
class AOParams:
    """Sampling budget for ambient occlusion.

    `radius` is the radius of influence in voxel units: occluders beyond it
    are ignored.  `step` is the march step for density integration.
    """

    n_rays: int = 100
    radius: float = 15.0
    step: float = 1.0
    mode: str = "hemisphere-geometry"

    def __post_init__(self):
        if self.n_rays < 1:
            raise ValueError(f"n_rays must be at least 1, got {self.n_rays}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.mode not in _AO_MODES:
            raise ValueError(
                f"unknown AO mode {self.mode!r}; pick one of {sorted(_AO_MODES)}")


@dataclass
class AOField:
    """Dense per-voxel occlusion in [0,1] at the fine grid resolution,
    shaped (rz, ry, rx); voxels with nothing in reach stay 0."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise ValueError(f"expected a 3D field, got shape {v.shape}")
        self.values = v

    def _flat(self) -> np.ndarray:
        cached = getattr(self, "_flat_cache", None)
        if cached is None:
            cached = np.ascontiguousarray(self.values.reshape(-1))
            self._flat_cache = cached
        return cached


def _unit(v, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError(f"{what} must be a nonzero vector")
    return v / n


def _shadow_origin(point, normal) -> np.ndarray:
    p = np.asarray(point, dtype=np.float64)
    if normal is None:
        return p
    return p + 1e-3 * _unit(normal, "normal")


def hard_shadow(point, light, model: VoxelModel, radius: float = 0.3,
                normal=None, joint_spheres: bool = True) -> int:
    """1 if the point sees the light position, 0 if any tube or joint sphere
    lies strictly between.  Passing the surface normal offsets the ray origin
    by 1e-3 along it to step off the surface the point came from."""
    o = _shadow_origin(point, normal)
    to_light = np.asarray(light, dtype=np.float64) - o
    max_t = float(np.linalg.norm(to_light))
    if max_t == 0.0:
        return 1
    d = to_light / max_t
    rx, ry, rz, counts, offsets, seg_a, seg_b = _model_args(model)[:7]
    blocked = _K.geometry_ray_blocked(
        o[0], o[1], o[2], d[0], d[1], d[2], max_t,
        rx, ry, rz, counts, offsets, seg_a, seg_b,
        float(radius), 1 if joint_spheres else 0)
    return 0 if blocked else 1


def replines_shadow(point, light, replines: RepLineField, grid_dims,
                    level: int = 1, tube_radius: float = 0.3,
                    normal=None) -> int:
    """Like hard_shadow but tested against at most one representative line
    per coarse voxel at the given level; the line's radius is the tube radius
    scaled to the level and thickened by its aggregated weight (clamped to
    [1,4])."""
    if not 1 <= level < len(replines.levels):
        raise ValueError(
            f"level must be in [1, {len(replines.levels) - 1}], got {level}")
    o = _shadow_origin(point, normal)
    to_light = np.asarray(light, dtype=np.float64) - o
    max_t = float(np.linalg.norm(to_light))
    if max_t == 0.0:
        return 1
    d = to_light / max_t
    lvl = replines.levels[level]
    size = float(1 << level)
    ldx, ldy, ldz = (-(-int(g) // (1 << level)) for g in grid_dims)
    blocked = _K.replines_ray_blocked(
        o[0], o[1], o[2], d[0], d[1], d[2], max_t,
        ldx, ldy, ldz, size,
        lvl.valid.astype(np.uint8), lvl.a, lvl.b, lvl.weight,
        float(tube_radius) * size)
    return 0 if blocked else 1


def cone_soft_shadow(point, light_direction, octree: DensityOctree,
                     eps: float = 0.01) -> float:
    """Blocking in [0,1] from marching the density pyramid toward the light,
    widening the sampled level so the footprint tracks a cone one voxel wide
    at distance 1; transmittance decays by 1 - density*step per sample and
    the march stops once it falls to `eps`."""
    p = np.asarray(point, dtype=np.float64)
    d = _unit(light_direction, "light direction")
    oct_flat, oct_off, oct_dims, n_levels = _octree_args(octree)
    gx, gy, gz = octree.dims(0)
    return float(_K.cone_blocking(
        p[0], p[1], p[2], d[0], d[1], d[2],
        oct_flat, oct_off, oct_dims, n_levels,
        float(gx), float(gy), float(gz), float(eps)))


def ao_hemisphere_geometry(point, normal, model: VoxelModel,
                           params: Optional[AOParams] = None,
                           tube_radius: float = 0.3,
                           jitter: float = 0.0) -> float:
    """Fraction of deterministic hemisphere rays around the normal that hit
    a tube within the radius of influence.  `jitter` rotates the direction
    lattice azimuthally (used to probe estimator variance)."""
    if params is None:
        params = AOParams()
    p = np.asarray(point, dtype=np.float64)
    n = _unit(normal, "normal")
    rx, ry, rz, counts, offsets, seg_a, seg_b = _model_args(model)[:7]
    return float(_K.ao_hemisphere_point(
        p[0], p[1], p[2], n[0], n[1], n[2],
        int(params.n_rays), float(params.radius), float(jitter),
        rx, ry, rz, counts, offsets, seg_a, seg_b, float(tube_radius)))


def ao_density_rays(point, normal, octree: DensityOctree,
                    params: Optional[AOParams] = None) -> float:
    """Mean per-ray blocking over deterministic hemisphere rays, where each
    ray integrates the fine density field until it saturates (sum >= 1),
    leaves the radius of influence, or exits the grid."""
    if params is None:
        params = AOParams()
    p = np.asarray(point, dtype=np.float64)
    n = _unit(normal, "normal")
    oct_flat, oct_off, oct_dims, _ = _octree_args(octree)
    gx, gy, gz = octree.dims(0)
    return float(_K.ao_density_point(
        p[0], p[1], p[2], n[0], n[1], n[2],
        int(params.n_rays), float(params.radius), float(params.step), 1,
        oct_flat, oct_off, oct_dims, float(gx), float(gy), float(gz)))


def precompute_voxel_ao(model: VoxelModel, octree: DensityOctree,
                        params: Optional[AOParams] = None,
                        workers: int = 1) -> AOField:
    """Full-sphere density-ray occlusion at every occupied voxel center.

    Defaults to 100 rays within 5 voxels at step 1.  Unoccupied voxels keep
    value 0; the result samples trilinearly via `sample_ao` and can be
    attached to the model as `model.ao` for rendering.
    """
    if params is None:
        params = AOParams(n_rays=100, radius=5.0, step=1.0)
    rx, ry, rz = model.spec.dims
    oct_flat, oct_off, oct_dims, _ = _octree_args(octree)
    occupied = np.nonzero(model.counts > 0)[0].astype(np.int64)
    out = np.zeros(model.voxel_count, dtype=np.float64)
    _K.set_threads(workers)
    _K.precompute_ao_kernel(occupied, rx, ry, rz,
                            int(params.n_rays), float(params.radius),
                            float(params.step),
                            oct_flat, oct_off, oct_dims, out)
    values = np.clip(out, 0.0, 1.0).reshape(rz, ry, rx).astype(np.float32)
    return AOField(values=values)


def sample_ao(field: AOField, point, normal=None) -> float:
    """Trilinear lookup of the precomputed field at a grid-space point.  The
    normal argument is accepted for interface parity and ignored: the stored
    occlusion integrates the full sphere, so it has no preferred direction."""
    p = np.asarray(point, dtype=np.float64)
    rz, ry, rx = field.values.shape
    v = float(_K.sample_field_trilinear(field._flat(), 0, rx, ry, rz, 1.0,
                                        p[0], p[1], p[2]))
    return min(1.0, max(0.0, v))
