"""Reference renderer and reconstruction-fidelity metrics.

The reference renderer tests every tube and joint sphere against every pixel
and composites through the same compiled stream as the accelerated renderer;
because nothing is culled (a conservative midpoint bound may skip the narrow
test, never a true hit), any disagreement with `render_frame` isolates a
traversal or gathering bug.  The geometry metrics compare original curves
against the chords a model actually stores: symmetric mean closest-point
distance and mean tangent deviation, both computed from arc-length samples,
plus the exact byte accounting of the encoding.
"""

import math
import time
from typing import Optional

import numpy as np

from . import _kernels as _K
from .lod import DensityOctree, RepLineField
from .raycast import (Camera, Frame, RenderParams, _camera_args, _illum_args,
                      _model_args, _OPACITY_MODES)
from .scene_io import CurveSet
from .voxelizer import VoxelModel

__all__ = [
    "brute_force_render",
    "image_compare",
    "mean_hausdorff",
    "mean_tangent_deviation",
    "memory_report",
]


# --- reference renderer ----------------------------------------------------


def _oracle_seg_args(model: VoxelModel, radius: float):
    """Per-segment midpoint, conservative rejection radius squared and home
    voxel linear index; cached on the model per tube radius."""
    cached = getattr(model, "_oracle_cache", None)
    if cached is not None and cached[0] == radius:
        return cached[1], cached[2], cached[3]
    a = model.seg_a.astype(np.float64)
    b = model.seg_b.astype(np.float64)
    mid = np.ascontiguousarray((a + b) * 0.5)
    half = 0.5 * np.linalg.norm(b - a, axis=1)
    # every point of the capsule lies within half+radius of the midpoint, so
    # a ray line farther than that from the midpoint cannot hit it
    rej2 = np.ascontiguousarray((half + radius) ** 2)
    dx, dy, _ = model.spec.dims
    vox = model.seg_voxel.astype(np.int64)
    voxlin = np.ascontiguousarray(vox[:, 0] + dx * (vox[:, 1] + dy * vox[:, 2]))
    model._oracle_cache = (radius, voxlin, mid, rej2)
    return voxlin, mid, rej2


def brute_force_render(camera: Camera, model: VoxelModel,
                       octree: Optional[DensityOctree] = None,
                       replines: Optional[RepLineField] = None,
                       params: Optional[RenderParams] = None,
                       workers: int = 1) -> Frame:
    """Render by testing all primitives at every pixel (no acceleration).

    Hits are sorted globally by entry depth and fed through the same
    compositor as the accelerated path, so the two are expected to agree to
    the bit on any scene the acceleration structure handles correctly.
    """
    if params is None:
        params = RenderParams()
    (shadow_mode, ao_mode,
     (oct_flat, oct_off, oct_dims, oct_levels),
     (rep_valid, rep_a, rep_b, rep_w, rep_dims, rep_size),
     shadow_radius_base, headlight, light, ao_flat) = _illum_args(
        params, model, octree, replines)

    cam = _camera_args(camera)
    mdl = _model_args(model)
    voxlin, mid, rej2 = _oracle_seg_args(model, params.tube_radius)

    img = np.zeros((camera.height, camera.width, 4), dtype=np.float32)
    row_stats = np.zeros((camera.height, 3), dtype=np.int64)
    eff = _K.set_threads(workers)
    t_start = time.perf_counter()
    _K.oracle_rows(
        *cam, *mdl[:9], voxlin, mid, rej2, mdl[9],
        float(params.tube_radius), _OPACITY_MODES[params.opacity_mode],
        float(params.base_opacity), float(params.tau),
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
        "voxel_steps": 0,
        "intersection_tests": int(row_stats[:, 1].sum()),
        "ms": ms,
        "workers": eff,
        "window_overflow": int(row_stats[:, 2].sum()),
    }
    return Frame(image=img, stats=stats)


# --- image comparison ------------------------------------------------------


def _as_float_image(img) -> np.ndarray:
    if hasattr(img, "image"):
        img = img.image
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64)


def image_compare(a, b, tol: float = 2.0 / 255.0) -> dict:
    """Channel-wise comparison of two images (arrays or Frames).

    Returns the maximum channel difference, the fraction of pixels whose
    every channel differs by at most `tol`, and PSNR in dB against a unit
    peak (inf for identical images).
    """
    ia = _as_float_image(a)
    ib = _as_float_image(b)
    if ia.shape != ib.shape:
        raise ValueError(f"image shapes differ: {ia.shape} vs {ib.shape}")
    if ia.ndim != 3:
        raise ValueError("expected (height, width, channels) images")
    diff = np.abs(ia - ib)
    if diff.size == 0:
        return {"max_diff": 0.0, "fraction_close": 1.0, "psnr": math.inf}
    mse = float(np.mean(diff * diff))
    return {
        "max_diff": float(diff.max()),
        "fraction_close": float(np.mean(np.all(diff <= tol, axis=2))),
        "psnr": math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse),
    }


# --- memory accounting -----------------------------------------------------


def memory_report(model: VoxelModel) -> dict:
    """Exact byte accounting of the encoded model: 5-byte voxel headers plus
    one fixed-width record per segment."""
    v = model.voxel_count
    s = model.segment_count
    w = model.record_width
    return {
        "header_bytes": 5 * v,
        "segment_bytes": w * s,
        "total": 5 * v + w * s,
        "bytes_per_segment": w,
    }


# --- geometry fidelity -----------------------------------------------------


def _sample_polyline(points: np.ndarray, spacing: float):
    """Arc-length samples at most `spacing` apart plus the unit tangent of
    the edge each sample lies on.  Zero-length edges contribute nothing; a
    fully degenerate polyline yields its first point with a zero tangent."""
    p = np.asarray(points, dtype=np.float64)
    if p.shape[0] < 2:
        return p[:1].copy(), np.zeros((min(1, p.shape[0]), 3))
    e = np.diff(p, axis=0)
    ln = np.linalg.norm(e, axis=1)
    keep = np.nonzero(ln > 0.0)[0]
    if keep.size == 0:
        return p[:1].copy(), np.zeros((1, 3))
    counts = np.maximum(1, np.ceil(ln[keep] / spacing)).astype(np.int64)
    total = int(counts.sum()) + 1
    out = np.empty((total, 3), dtype=np.float64)
    tan = np.empty((total, 3), dtype=np.float64)
    pos = 0
    for i, k in zip(keep, counts):
        d = e[i] / ln[i]
        ts = (np.arange(k, dtype=np.float64) / k * ln[i])[:, None]
        out[pos:pos + k] = p[i] + ts * d
        tan[pos:pos + k] = d
        pos += k
    out[pos] = p[keep[-1] + 1]
    tan[pos] = e[keep[-1]] / ln[keep[-1]]
    return out, tan


def _sample_segments(qa: np.ndarray, qb: np.ndarray, spacing: float) -> np.ndarray:
    """Samples (endpoints included) along each segment of a soup."""
    parts = []
    for j in range(qa.shape[0]):
        ln = float(np.linalg.norm(qb[j] - qa[j]))
        k = max(1, math.ceil(ln / spacing))
        ts = np.linspace(0.0, 1.0, k + 1)[:, None]
        parts.append(qa[j] * (1.0 - ts) + qb[j] * ts)
    return np.vstack(parts)


def _min_distances(pts: np.ndarray, qa: np.ndarray, qb: np.ndarray):
    dist = np.empty(pts.shape[0], dtype=np.float64)
    idx = np.empty(pts.shape[0], dtype=np.int64)
    _K.nearest_segment_kernel(np.ascontiguousarray(pts),
                              np.ascontiguousarray(qa),
                              np.ascontiguousarray(qb), dist, idx)
    return dist, idx


def _soup_distance(sa, ea0, ea1, sb, eb0, eb1) -> float:
    """Symmetric mean closest-point distance between two segment soups given
    their samples; symmetric because both directions enter one average."""
    d_ab, _ = _min_distances(sa, eb0, eb1)
    d_ba, _ = _min_distances(sb, ea0, ea1)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def _pair_distance(pa: np.ndarray, pb: np.ndarray, spacing: float = 0.1) -> float:
    """Symmetric mean closest-point distance between two polylines."""
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    sa, _ = _sample_polyline(pa, spacing)
    sb, _ = _sample_polyline(pb, spacing)
    return _soup_distance(sa, pa[:-1], pa[1:], sb, pb[:-1], pb[1:])


def _require_curve_ids(model: VoxelModel):
    if model.seg_curve is None or model.seg_order is None:
        raise ValueError(
            "model carries no per-curve bookkeeping (it was loaded from a "
            "cache); rebuild it in-process to compute fidelity metrics")


def mean_hausdorff(curves: CurveSet, model: VoxelModel,
                   spacing: float = 0.1) -> dict:
    """Symmetric mean closest-point distance, per curve, between the original
    polyline and the chords the model stores for it (voxel units).

    Both sides are sampled at arc-length steps of at most `spacing`; each
    sample contributes its distance to the nearest point of the other side.
    Curves with no surviving chords are skipped and counted.  Returns the
    mean and max over curves plus the used/skipped counts.
    """
    _require_curve_ids(model)
    a64 = model.seg_a.astype(np.float64)
    b64 = model.seg_b.astype(np.float64)
    per = []
    skipped = 0
    for ci, curve in enumerate(curves.curves):
        sel = np.nonzero(model.seg_curve == ci)[0]
        if sel.size == 0:
            skipped += 1
            continue
        qa = a64[sel]
        qb = b64[sel]
        p = np.asarray(curve.points, dtype=np.float64)
        sa, _ = _sample_polyline(p, spacing)
        sb = _sample_segments(qa, qb, spacing)
        per.append(_soup_distance(sa, p[:-1], p[1:], sb, qa, qb))
    if not per:
        return {"mean": math.nan, "max": math.nan,
                "curves": 0, "skipped": skipped}
    return {"mean": float(np.mean(per)), "max": float(np.max(per)),
            "curves": len(per), "skipped": skipped}


def mean_tangent_deviation(curves: CurveSet, model: VoxelModel,
                           spacing: float = 0.1) -> float:
    """Mean angle (degrees) between the original tangent at each arc-length
    sample and the direction of the nearest stored chord of the same curve.

    Chords follow traversal order, so directions are compared as oriented
    vectors.  Degenerate chords and zero-tangent samples are ignored; with
    no usable samples at all the result is NaN.
    """
    _require_curve_ids(model)
    a64 = model.seg_a.astype(np.float64)
    b64 = model.seg_b.astype(np.float64)
    angle_sum = 0.0
    n = 0
    for ci, curve in enumerate(curves.curves):
        sel = np.nonzero(model.seg_curve == ci)[0]
        if sel.size == 0:
            continue
        qa = a64[sel]
        qb = b64[sel]
        d = qb - qa
        ln = np.linalg.norm(d, axis=1)
        ok = ln > 0.0
        if not np.any(ok):
            continue
        dirs = d[ok] / ln[ok, None]
        samples, tans = _sample_polyline(curve.points, spacing)
        good = np.linalg.norm(tans, axis=1) > 0.0
        if not np.any(good):
            continue
        samples = samples[good]
        tans = tans[good]
        _, idx = _min_distances(samples, qa[ok], qb[ok])
        dots = np.clip(np.sum(tans * dirs[idx], axis=1), -1.0, 1.0)
        angle_sum += float(np.degrees(np.arccos(dots)).sum())
        n += samples.shape[0]
    return angle_sum / n if n else math.nan
