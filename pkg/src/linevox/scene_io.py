"""Curve-set loading, synthetic generation, and grid-local normalization.

A curve set is a list of polylines, each vertex carrying one scalar attribute
in [0, 1] that is later mapped through a 256-entry transfer table.  All
downstream stages assume curves normalized into the grid-local frame, where
voxels are unit cubes and coordinates run from (0,0,0) to (r_x, r_y, r_z).
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

LINES_MAGIC = b"LNS1"

# Offsets smaller than this fraction of the grid size are snapped to zero so
# that re-normalizing an already-normalized set is an exact identity.
_IDENTITY_SNAP = 1e-9


class CurveFormatError(ValueError):
    """Malformed curve file: bad magic, bad record, or out-of-range index."""


@dataclass
class Curve:
    """One polyline: (n,3) float64 vertex positions and (n,) attributes."""

    points: np.ndarray
    attrs: np.ndarray

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.attrs = np.ascontiguousarray(self.attrs, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"curve points must be (n,3), got {self.points.shape}")
        if self.points.shape[0] < 2:
            raise ValueError("curve needs at least 2 vertices")
        if self.attrs.shape != (self.points.shape[0],):
            raise ValueError("one attribute per vertex required")
        if np.any(self.attrs < 0.0) or np.any(self.attrs > 1.0):
            raise ValueError("attributes must lie in [0,1]")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class CurveSet:
    """A set of curves plus the tight axis-aligned bound of all vertices."""

    curves: list[Curve]
    bbox: np.ndarray  # (2,3): [min corner, max corner]

    @classmethod
    def from_curves(cls, curves: list[Curve]) -> "CurveSet":
        if not curves:
            raise ValueError("no curves")
        lo = np.min([c.points.min(axis=0) for c in curves], axis=0)
        hi = np.max([c.points.max(axis=0) for c in curves], axis=0)
        return cls(curves=curves, bbox=np.stack([lo, hi]))

    @property
    def n_curves(self) -> int:
        return len(self.curves)

    @property
    def n_vertices(self) -> int:
        return sum(len(c) for c in self.curves)

    def all_points(self) -> np.ndarray:
        return np.concatenate([c.points for c in self.curves], axis=0)


@dataclass(frozen=True)
class GridSpec:
    """Macro voxel grid: dims (r_x, r_y, r_z) and per-face bin resolution N.

    Voxels are unit cubes in grid-local coordinates.  Each voxel face is
    subdivided into N x N bins; segment endpoints snap to bin centers.
    """

    dims: tuple[int, int, int]
    bins_per_axis: int = 32

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"grid dims must be three positive ints, got {dims}")
        n = self.bins_per_axis
        if n < 2 or n > 256 or (n & (n - 1)) != 0:
            raise ValueError(f"bins_per_axis must be a power of two in [2,256], got {n}")

    @property
    def voxel_count(self) -> int:
        dx, dy, dz = self.dims
        return dx * dy * dz

    @property
    def log2_bins(self) -> int:
        return int(self.bins_per_axis).bit_length() - 1


def grid_spec_for(curves: CurveSet, resolution: int, bins_per_axis: int = 32) -> GridSpec:
    """Choose grid dims for a curve set: `resolution` voxels along the longest
    bbox axis, the other axes scaled to preserve aspect ratio (within one
    voxel, minimum 1)."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    ext = curves.bbox[1] - curves.bbox[0]
    longest = float(ext.max())
    if longest <= 0.0:
        raise ValueError("degenerate bounding box: zero extent on all axes")
    dims = tuple(max(1, int(round(resolution * float(e) / longest))) for e in ext)
    return GridSpec(dims=dims, bins_per_axis=bins_per_axis)


def _drop_degenerate(points: np.ndarray, attrs: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Remove vertices that repeat their predecessor exactly (zero-length
    input segments produce no face crossings)."""
    if points.shape[0] < 2:
        return points, attrs, 0
    keep = np.ones(points.shape[0], dtype=bool)
    keep[1:] = np.any(points[1:] != points[:-1], axis=1)
    dropped = int(points.shape[0] - keep.sum())
    if dropped:
        points = points[keep]
        attrs = attrs[keep]
    return points, attrs, dropped


def _finish_load(raw: list[tuple[np.ndarray, np.ndarray]], source: str) -> CurveSet:
    curves: list[Curve] = []
    dropped_vertices = 0
    dropped_curves = 0
    for pts, at in raw:
        pts, at, d = _drop_degenerate(pts, at)
        dropped_vertices += d
        if pts.shape[0] < 2:
            dropped_curves += 1
            continue
        curves.append(Curve(points=pts, attrs=np.clip(at, 0.0, 1.0)))
    if dropped_vertices or dropped_curves:
        log.warning(
            "%s: dropped %d zero-length segment vertices and %d degenerate curves",
            source, dropped_vertices, dropped_curves,
        )
    if not curves:
        raise CurveFormatError(f"{source}: no curves")
    return CurveSet.from_curves(curves)


def load_obj_lines(path) -> CurveSet:
    """Load the OBJ polyline subset: `v x y z` records and `l i j k ...`
    records (1-based indices, negative = relative).  Optional `# attr a ...`
    comment lines supply per-vertex attributes in vertex order; vertices
    without one default to 0."""
    vertices: list[tuple[float, float, float]] = []
    attrs: list[float] = []
    polylines: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split()
            if parts[0] == "#":
                if len(parts) >= 2 and parts[1] == "attr":
                    try:
                        attrs.extend(float(tok) for tok in parts[2:])
                    except ValueError as exc:
                        raise CurveFormatError(f"{path}:{lineno}: bad attr value: {exc}") from None
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise CurveFormatError(f"{path}:{lineno}: vertex record needs 3 coordinates")
                try:
                    vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError:
                    raise CurveFormatError(f"{path}:{lineno}: malformed vertex record") from None
            elif parts[0] == "l":
                if len(parts) < 3:
                    raise CurveFormatError(f"{path}:{lineno}: line record needs >= 2 indices")
                idx: list[int] = []
                for tok in parts[1:]:
                    try:
                        i = int(tok)
                    except ValueError:
                        raise CurveFormatError(f"{path}:{lineno}: malformed index {tok!r}") from None
                    if i == 0:
                        raise CurveFormatError(f"{path}:{lineno}: index 0 is invalid (OBJ is 1-based)")
                    j = i - 1 if i > 0 else len(vertices) + i
                    if j < 0 or j >= len(vertices):
                        raise CurveFormatError(f"{path}:{lineno}: vertex index {i} out of range")
                    idx.append(j)
                polylines.append(idx)
            # other OBJ record types are ignored
    raw = []
    for idx in polylines:
        pts = np.array([vertices[i] for i in idx], dtype=np.float64)
        at = np.array([attrs[i] if i < len(attrs) else 0.0 for i in idx], dtype=np.float64)
        raw.append((pts, at))
    return _finish_load(raw, str(path))


def save_lines_binary(curves: CurveSet, path) -> None:
    """Write the `.lines` format: magic "LNS1", u32 curve count, then per
    curve a u32 vertex count and vertex_count x (f32 x, y, z, attr)."""
    with open(path, "wb") as fh:
        fh.write(LINES_MAGIC)
        fh.write(struct.pack("<I", curves.n_curves))
        for c in curves.curves:
            fh.write(struct.pack("<I", len(c)))
            rec = np.empty((len(c), 4), dtype="<f4")
            rec[:, :3] = c.points
            rec[:, 3] = c.attrs
            fh.write(rec.tobytes())


def load_lines_binary(path) -> CurveSet:
    """Read the `.lines` format written by :func:`save_lines_binary`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != LINES_MAGIC:
        raise CurveFormatError(f"{path}: bad magic (expected {LINES_MAGIC!r})")
    (n_curves,) = struct.unpack_from("<I", data, 4)
    if n_curves == 0:
        raise CurveFormatError(f"{path}: no curves")
    off = 8
    raw = []
    for k in range(n_curves):
        if off + 4 > len(data):
            raise CurveFormatError(f"{path}: truncated at curve {k}")
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        nbytes = n * 16
        if off + nbytes > len(data):
            raise CurveFormatError(f"{path}: truncated payload in curve {k}")
        rec = np.frombuffer(data, dtype="<f4", count=n * 4, offset=off).reshape(n, 4)
        off += nbytes
        raw.append((rec[:, :3].astype(np.float64), rec[:, 3].astype(np.float64)))
    return _finish_load(raw, str(path))


# --- synthetic tornado ------------------------------------------------------
#
# Analytic stand-in for a tornado-like flow: streamlines seeded in a cylinder,
# advected by a field that swirls faster near the axis (high curvature there),
# pulls toward a funnel radius that widens with height, and drifts upward.
# Trajectories provably stay inside _TORNADO_BOUND: the radial term is a
# restoring force toward the funnel and the climb rate is capped.

_FUNNEL_R0 = 0.12
_FUNNEL_SLOPE = 0.45
_SWIRL = 0.22
_SWIRL_SOFT = 0.15
_RADIAL_PULL = 1.6
_CLIMB = 0.28
_CLIMB_CORE = 0.22
_STEP_DT = 6.0e-4
# most seeds start in a thin sheath around the funnel so the lines bunch up
# there, the rest fill the surroundings
_CORE_FRACTION = 0.8
_CORE_SPREAD = 0.045

_TORNADO_BOUND = np.array([[-1.25, -1.25, -0.05], [1.25, 1.25, 1.25]])


def _tornado_velocity(p: np.ndarray) -> np.ndarray:
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    r = np.sqrt(x * x + y * y)
    funnel = _FUNNEL_R0 + _FUNNEL_SLOPE * np.clip(z, 0.0, 1.0)
    inv_r = 1.0 / np.maximum(r, 1e-9)
    # unit radial / tangential directions
    rx, ry = x * inv_r, y * inv_r
    tx, ty = -ry, rx
    vt = _SWIRL / (r + _SWIRL_SOFT)
    vr = -_RADIAL_PULL * (r - funnel)
    vz = _CLIMB + _CLIMB_CORE * np.exp(-(r * r) / 0.08)
    v = np.empty_like(p)
    v[:, 0] = vr * rx + vt * tx
    v[:, 1] = vr * ry + vt * ty
    v[:, 2] = vz
    return v


def generate_tornado(n_curves: int, steps: int, seed: int) -> CurveSet:
    """Integrate `n_curves` streamlines of the synthetic tornado field with
    `steps` fixed-size Euler steps each.  Deterministic for a fixed seed.
    The per-vertex attribute is the normalized local speed."""
    if n_curves < 1:
        raise ValueError("n_curves must be >= 1")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    rng = np.random.default_rng(seed)
    th0 = rng.random(n_curves) * 2.0 * np.pi
    z0 = 0.04 + 0.88 * rng.random(n_curves)
    n_core = int(round(_CORE_FRACTION * n_curves))
    funnel0 = _FUNNEL_R0 + _FUNNEL_SLOPE * z0[:n_core]
    r_core = np.clip(funnel0 + rng.normal(0.0, _CORE_SPREAD, n_core), 0.02, 1.1)
    r_outer = 0.05 + 0.95 * np.sqrt(rng.random(n_curves - n_core))
    r0 = np.concatenate([r_core, r_outer])
    p = np.empty((n_curves, 3))
    p[:, 0] = r0 * np.cos(th0)
    p[:, 1] = r0 * np.sin(th0)
    p[:, 2] = z0

    pts = np.empty((steps, n_curves, 3))
    spd = np.empty((steps, n_curves))
    pts[0] = p
    v = _tornado_velocity(p)
    spd[0] = np.linalg.norm(v, axis=1)
    for k in range(1, steps):
        p = p + _STEP_DT * v
        pts[k] = p
        v = _tornado_velocity(p)
        spd[k] = np.linalg.norm(v, axis=1)

    vmax = float(spd.max())
    attrs = spd / vmax if vmax > 0 else np.zeros_like(spd)
    curves = [Curve(points=pts[:, i, :].copy(), attrs=attrs[:, i].copy()) for i in range(n_curves)]
    return CurveSet.from_curves(curves)


def tornado_bound() -> np.ndarray:
    """Analytic box all tornado vertices are guaranteed to stay inside."""
    return _TORNADO_BOUND.copy()


def normalize_to_grid(curves: CurveSet, spec: GridSpec) -> CurveSet:
    """Map a curve set into [0, r_x] x [0, r_y] x [0, r_z] with a single
    uniform scale (no anisotropic distortion); leftover room on the
    non-limiting axes is split evenly between both sides."""
    lo, hi = curves.bbox[0], curves.bbox[1]
    ext = hi - lo
    dims = np.array(spec.dims, dtype=np.float64)
    if not np.any(ext > 0.0):
        raise ValueError("cannot normalize: bounding box has zero extent on all axes")
    positive = ext > 0.0
    scale = float(np.min(dims[positive] / ext[positive]))
    offset = (dims - scale * ext) / 2.0 - scale * lo
    # Re-normalizing an already grid-local set must be an exact identity.  The
    # recomputed scale can miss 1.0 by a few ulps (the first pass leaves
    # rounding residue in the bounding box), so snap it before the offsets.
    if abs(scale - 1.0) <= _IDENTITY_SNAP:
        scale = 1.0
        offset[np.abs(offset) <= _IDENTITY_SNAP * dims] = 0.0
    out = []
    for c in curves.curves:
        out.append(Curve(points=c.points * scale + offset, attrs=c.attrs.copy()))
    return CurveSet.from_curves(out)
