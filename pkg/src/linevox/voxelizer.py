"""Two-level discretization of curve sets into a compact voxel model.

Curves are clipped against the unit-cube voxel grid, each per-voxel chord is
reduced to its two face intersection points, and those points are quantized
to the centers of an N x N bin raster on the voxel face.  A chord then packs
into a few bytes: two 3-bit face IDs, two 2*log2(N)-bit bin codes, an 8-bit
attribute index, and a 5-bit per-voxel line ID.  All chords of a voxel sit
consecutively in one flat array addressed by a per-voxel header (1-byte
count, 4-byte offset), so the whole model costs 5*V + width*S bytes.

Face IDs: face = 2*axis + side, side 0 at local coordinate 0 and side 1 at
local coordinate 1.  In-face axes are the remaining two in ascending order;
a bin code is bu + N*bv on those axes.  A point on several faces at once (a
voxel edge or corner) belongs to the smallest face ID.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .scene_io import Curve, CurveSet, GridSpec

_FACE_AXIS = np.array([0, 0, 1, 1, 2, 2], dtype=np.int64)
_FACE_SIDE = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
_FACE_U = np.array([1, 1, 0, 0, 0, 0], dtype=np.int64)
_FACE_V = np.array([2, 2, 2, 2, 1, 1], dtype=np.int64)

_ATTR_BITS = 8
_LID_BITS = 5
_FACE_BITS = 3

# chords shorter than this (infinity norm) are corner-crossing noise far
# below bin resolution and carry no mass
_MIN_CHORD = 1e-9

_ON_FACE_TOL = 1e-6


@dataclass(frozen=True)
class QuantizedSegment:
    """One packed-record worth of fields (voxel identity lives in the
    surrounding array layout, not in the record)."""

    face_in: int
    bin_in: int
    face_out: int
    bin_out: int
    attr_index: int
    local_line_id: int


class ClippedSegment(NamedTuple):
    voxel: tuple
    entry: np.ndarray
    exit: np.ndarray
    attr_entry: float
    attr_exit: float


def _check_bins(n_bins: int) -> int:
    n = int(n_bins)
    if n < 2 or n > 256 or (n & (n - 1)) != 0:
        raise ValueError(f"bin resolution must be a power of two in [2,256], got {n_bins}")
    return n


def record_width(n_bins: int) -> int:
    """Bytes per packed segment record: the minimal whole-byte envelope of
    2*(3 + 2*log2(N)) + 8 + 5 bits."""
    n = _check_bins(n_bins)
    lb = n.bit_length() - 1
    bits = 2 * (_FACE_BITS + 2 * lb) + _ATTR_BITS + _LID_BITS
    return (bits + 7) // 8


def _field_layout(n_bins: int):
    """Bit offsets (LSB first): face_in, bin_in, face_out, bin_out, attr, lid."""
    lb = int(n_bins).bit_length() - 1
    bb = 2 * lb
    o_face_in = 0
    o_bin_in = _FACE_BITS
    o_face_out = o_bin_in + bb
    o_bin_out = o_face_out + _FACE_BITS
    o_attr = o_bin_out + bb
    o_lid = o_attr + _ATTR_BITS
    return bb, o_bin_in, o_face_out, o_bin_out, o_attr, o_lid


def pack_segment(seg: QuantizedSegment, n_bins: int) -> bytes:
    n = _check_bins(n_bins)
    max_bin = n * n
    if not (0 <= seg.face_in < 6 and 0 <= seg.face_out < 6):
        raise ValueError(f"face IDs must be in [0,6), got {seg.face_in}/{seg.face_out}")
    if not (0 <= seg.bin_in < max_bin and 0 <= seg.bin_out < max_bin):
        raise ValueError(f"bin codes must be in [0,{max_bin}), got {seg.bin_in}/{seg.bin_out}")
    if not 0 <= seg.attr_index < 256:
        raise ValueError(f"attr_index out of byte range: {seg.attr_index}")
    if not 0 <= seg.local_line_id < 32:
        raise ValueError(f"local_line_id needs 5 bits: {seg.local_line_id}")
    _, o_bin_in, o_face_out, o_bin_out, o_attr, o_lid = _field_layout(n)
    value = (
        seg.face_in
        | (seg.bin_in << o_bin_in)
        | (seg.face_out << o_face_out)
        | (seg.bin_out << o_bin_out)
        | (seg.attr_index << o_attr)
        | (seg.local_line_id << o_lid)
    )
    return value.to_bytes(record_width(n), "little")


def unpack_segment(data: bytes, n_bins: int) -> QuantizedSegment:
    n = _check_bins(n_bins)
    width = record_width(n)
    if len(data) != width:
        raise ValueError(f"expected a {width}-byte record for N={n}, got {len(data)} bytes")
    bb, o_bin_in, o_face_out, o_bin_out, o_attr, o_lid = _field_layout(n)
    value = int.from_bytes(data, "little")
    bin_mask = (1 << bb) - 1
    return QuantizedSegment(
        face_in=value & 0b111,
        bin_in=(value >> o_bin_in) & bin_mask,
        face_out=(value >> o_face_out) & 0b111,
        bin_out=(value >> o_bin_out) & bin_mask,
        attr_index=(value >> o_attr) & 0xFF,
        local_line_id=(value >> o_lid) & 0x1F,
    )


def quantize_point_on_face(p, face: int, n_bins: int, voxel=None):
    """Snap a face point to the center of its N x N bin.

    `p` is either the two in-face coordinates in [0,1] (then `voxel` is
    ignored) or a 3D grid-space point together with its voxel, which must lie
    on the named face within 1e-6.  Returns (bin code, reconstructed point of
    the same dimensionality)."""
    n = _check_bins(n_bins)
    if not 0 <= face < 6:
        raise ValueError(f"face ID must be in [0,6), got {face}")
    p = np.asarray(p, dtype=np.float64)
    if p.shape == (2,):
        u, v = p
    elif p.shape == (3,):
        if voxel is None:
            raise ValueError("a 3D point needs its voxel")
        local = p - np.asarray(voxel, dtype=np.float64)
        axis = _FACE_AXIS[face]
        if abs(local[axis] - _FACE_SIDE[face]) > _ON_FACE_TOL:
            raise ValueError(
                f"point {p.tolist()} is {abs(local[axis] - _FACE_SIDE[face]):.2e} off face {face}")
        if np.any(local < -_ON_FACE_TOL) or np.any(local > 1 + _ON_FACE_TOL):
            raise ValueError(f"point {p.tolist()} lies outside voxel {voxel}")
        u, v = local[_FACE_U[face]], local[_FACE_V[face]]
    else:
        raise ValueError(f"expected a 2D in-face or 3D grid point, got shape {p.shape}")
    bu = min(max(int(np.floor(u * n)), 0), n - 1)
    bv = min(max(int(np.floor(v * n)), 0), n - 1)
    code = bu + n * bv
    cu, cv = (bu + 0.5) / n, (bv + 0.5) / n
    if p.shape == (2,):
        return code, np.array([cu, cv])
    q = np.empty(3)
    q[_FACE_AXIS[face]] = _FACE_SIDE[face]
    q[_FACE_U[face]] = cu
    q[_FACE_V[face]] = cv
    return code, q + np.asarray(voxel, dtype=np.float64)


# --- clipping ----------------------------------------------------------------

def _plane_events(a0, a1, e_base):
    """All integer-plane crossings for a batch of edges.

    Upward motion crosses planes in (x0, x1], downward in (x1, x0]; with the
    half-open voxel convention floor(x) this counts a vertex sitting exactly
    on a plane once, on the side that actually changes voxel.
    Returns (edge index, axis, plane, parameter) arrays.
    """
    ev_e, ev_ax, ev_k, ev_s, ev_up = [], [], [], [], []
    n_edges = a0.shape[0]
    for ax in range(3):
        x0 = a0[:, ax]
        x1 = a1[:, ax]
        d = x1 - x0
        f0 = np.floor(x0)
        f1 = np.floor(x1)
        cnt = np.where(d > 0, f1 - f0, f0 - f1).astype(np.int64)
        np.maximum(cnt, 0, out=cnt)
        total = int(cnt.sum())
        if total == 0:
            continue
        eidx = np.repeat(np.arange(n_edges), cnt)
        starts = np.cumsum(cnt) - cnt
        within = np.arange(total) - np.repeat(starts, cnt)
        up = d[eidx] > 0
        k = np.where(up, f0[eidx] + 1 + within, f0[eidx] - within)
        s = np.clip((k - x0[eidx]) / d[eidx], 0.0, 1.0)
        ev_e.append(eidx + e_base)
        ev_ax.append(np.full(total, ax, dtype=np.int64))
        ev_k.append(k)
        ev_s.append(s)
        ev_up.append(up)
    if not ev_e:
        z = np.zeros(0)
        return z.astype(np.int64), z.astype(np.int64), z, z, z.astype(bool)
    return (np.concatenate(ev_e), np.concatenate(ev_ax),
            np.concatenate(ev_k), np.concatenate(ev_s), np.concatenate(ev_up))


def _clip_batch(pts, attrs, point_curve, dims):
    """Clip many curves at once; returns per-chord arrays in curve order."""
    dims = np.asarray(dims, dtype=np.int64)
    same = point_curve[1:] == point_curve[:-1]
    e0 = np.nonzero(same)[0]
    if e0.size == 0:
        return _empty_chords()
    a0, a1 = pts[e0], pts[e0 + 1]
    ev_e, ev_ax, ev_k, ev_s, ev_up = _plane_events(a0, a1, 0)
    if ev_e.size < 2:
        return _empty_chords()
    order = np.lexsort((ev_s, ev_e))
    ev_e, ev_ax, ev_k, ev_s, ev_up = (
        ev_e[order], ev_ax[order], ev_k[order], ev_s[order], ev_up[order])

    pos = a0[ev_e] + ev_s[:, None] * (a1[ev_e] - a0[ev_e])
    pos[np.arange(pos.shape[0]), ev_ax] = ev_k  # crossing axis is exact
    at = attrs[e0][ev_e] + ev_s * (attrs[e0 + 1][ev_e] - attrs[e0][ev_e])
    ev_curve = point_curve[e0][ev_e]

    pair = ev_curve[:-1] == ev_curve[1:]
    p_in, p_out = pos[:-1][pair], pos[1:][pair]
    a_in, a_out = at[:-1][pair], at[1:][pair]
    curve = ev_curve[:-1][pair]

    # Off-crossing axes take the chord midpoint's voxel (the piece stays in
    # one voxel, and the straight chord shares its convex hull).  On each
    # crossing axis the direction decides the side; this also settles chords
    # that graze a plane and return, where both endpoints sit on the plane.
    mid = 0.5 * (p_in + p_out)
    vox = np.floor(mid).astype(np.int64)
    rows = np.arange(vox.shape[0])
    ax_in, k_in, up_in = ev_ax[:-1][pair], ev_k[:-1][pair], ev_up[:-1][pair]
    ax_out, k_out, up_out = ev_ax[1:][pair], ev_k[1:][pair], ev_up[1:][pair]
    vox[rows, ax_out] = np.where(up_out, k_out - 1, k_out).astype(np.int64)
    vox[rows, ax_in] = np.where(up_in, k_in, k_in - 1).astype(np.int64)
    keep = np.max(np.abs(p_out - p_in), axis=1) > _MIN_CHORD
    keep &= np.all(vox >= 0, axis=1) & np.all(vox < dims, axis=1)
    p_in, p_out, a_in, a_out, curve, vox = (
        p_in[keep], p_out[keep], a_in[keep], a_out[keep], curve[keep], vox[keep])

    if curve.size:
        new = np.empty(curve.size, dtype=bool)
        new[0] = True
        new[1:] = curve[1:] != curve[:-1]
        starts = np.nonzero(new)[0]
        run = np.repeat(starts, np.diff(np.append(starts, curve.size)))
        within = np.arange(curve.size) - run
    else:
        within = np.zeros(0, dtype=np.int64)
    return vox, p_in, p_out, a_in, a_out, curve, within


def _empty_chords():
    z3 = np.zeros((0, 3))
    z = np.zeros(0)
    zi = np.zeros(0, dtype=np.int64)
    return np.zeros((0, 3), dtype=np.int64), z3, z3, z, z, zi, zi


def clip_curve_to_voxels(curve: Curve, spec: GridSpec) -> list:
    """Split one curve into per-voxel chords between face crossings.

    Pieces before the first crossing and after the last are not representable
    (they have no entry or exit face) and are omitted, as are pieces outside
    the grid.  A curve living inside a single voxel therefore yields nothing.
    """
    point_curve = np.zeros(len(curve), dtype=np.int64)
    vox, p_in, p_out, a_in, a_out, _, _ = _clip_batch(
        curve.points, curve.attrs, point_curve, spec.dims)
    return [
        ClippedSegment(tuple(int(x) for x in vox[i]), p_in[i], p_out[i],
                       float(a_in[i]), float(a_out[i]))
        for i in range(vox.shape[0])
    ]


# --- model -------------------------------------------------------------------

def default_transfer_table() -> np.ndarray:
    """Blue-to-red diverging color ramp with opacity 1 everywhere."""
    t = np.linspace(0.0, 1.0, 256)
    cold = np.array([0.231, 0.299, 0.754])
    mid = np.array([0.865, 0.865, 0.865])
    warm = np.array([0.706, 0.016, 0.150])
    table = np.empty((256, 4), dtype=np.float32)
    lo = t < 0.5
    table[lo, :3] = cold + (t[lo, None] * 2.0) * (mid - cold)
    table[~lo, :3] = mid + ((t[~lo, None] - 0.5) * 2.0) * (warm - mid)
    table[:, 3] = 1.0
    return table


@dataclass
class VoxelModel:
    """Compact voxel encoding plus unpacked per-segment caches.

    Only `counts`, `offsets` and `packed` constitute the encoded model (the
    5V + width*S memory identity); the seg_* arrays are derived lookup caches
    kept for CPU kernels and can always be rebuilt from the packed bytes.
    `seg_curve`/`seg_order` survive only an in-process build (not the .vxl
    cache) and exist for fidelity metrics.
    """

    spec: GridSpec
    counts: np.ndarray
    offsets: np.ndarray
    packed: np.ndarray
    transfer_table: np.ndarray
    seg_voxel: np.ndarray
    seg_a: np.ndarray
    seg_b: np.ndarray
    seg_attr: np.ndarray
    seg_lid: np.ndarray
    seg_face_in: np.ndarray
    seg_bin_in: np.ndarray
    seg_face_out: np.ndarray
    seg_bin_out: np.ndarray
    dropped_overflow: int = 0
    seg_curve: Optional[np.ndarray] = None
    seg_order: Optional[np.ndarray] = None
    # optional precomputed per-voxel occlusion, shape (rz, ry, rx) float32
    ao: Optional[np.ndarray] = None

    @property
    def voxel_count(self) -> int:
        return self.spec.voxel_count

    @property
    def segment_count(self) -> int:
        return int(self.seg_attr.shape[0])

    @property
    def record_width(self) -> int:
        return record_width(self.spec.bins_per_axis)

    @property
    def memory_bytes(self) -> int:
        return 5 * self.voxel_count + self.record_width * self.segment_count

    def linear_index(self, voxel) -> int:
        dx, dy, _ = self.spec.dims
        return int(voxel[0] + dx * (voxel[1] + dy * voxel[2]))


def _faces_and_bins(points, vox, n):
    """Vectorized face assignment + bin quantization for on-face points."""
    local = points - vox
    eps = 1e-9
    cand = np.empty((points.shape[0], 6), dtype=bool)
    for ax in range(3):
        cand[:, 2 * ax] = local[:, ax] <= eps
        cand[:, 2 * ax + 1] = local[:, ax] >= 1.0 - eps
    if not np.all(cand.any(axis=1)):
        bad = np.nonzero(~cand.any(axis=1))[0][0]
        raise AssertionError(f"chord endpoint off every face: local={local[bad]}")
    face = np.argmax(cand, axis=1)
    rows = np.arange(points.shape[0])
    u = local[rows, _FACE_U[face]]
    v = local[rows, _FACE_V[face]]
    bu = np.clip(np.floor(u * n).astype(np.int64), 0, n - 1)
    bv = np.clip(np.floor(v * n).astype(np.int64), 0, n - 1)
    code = bu + n * bv
    q = np.empty_like(points)
    q[rows, _FACE_AXIS[face]] = _FACE_SIDE[face]
    q[rows, _FACE_U[face]] = (bu + 0.5) / n
    q[rows, _FACE_V[face]] = (bv + 0.5) / n
    return face.astype(np.uint8), code, q + vox


def _pack_all(face_in, bin_in, face_out, bin_out, attr, lid, n):
    _, o_bin_in, o_face_out, o_bin_out, o_attr, o_lid = _field_layout(n)
    value = (
        face_in.astype(np.uint64)
        | (bin_in.astype(np.uint64) << np.uint64(o_bin_in))
        | (face_out.astype(np.uint64) << np.uint64(o_face_out))
        | (bin_out.astype(np.uint64) << np.uint64(o_bin_out))
        | (attr.astype(np.uint64) << np.uint64(o_attr))
        | (lid.astype(np.uint64) << np.uint64(o_lid))
    )
    width = record_width(n)
    return value.astype("<u8").view(np.uint8).reshape(-1, 8)[:, :width].copy().reshape(-1)


def build_voxel_model(curves: CurveSet, spec: GridSpec, transfer_table=None,
                      workers: int = 1, memory_budget: Optional[int] = None) -> VoxelModel:
    """Clip, quantize, pack, and compact a whole curve set.

    The flat segment array is grouped by voxel in scan order (x fastest) via
    a stable sort, so the output is byte-identical for any `workers` value;
    the worker count only bounds how many curves are clipped per batch.
    Voxels hit by more than 255 chords keep the first 255 in curve order and
    the rest are counted in `dropped_overflow`.
    """
    if transfer_table is None:
        transfer_table = default_transfer_table()
    transfer_table = np.asarray(transfer_table, dtype=np.float32)
    if transfer_table.shape != (256, 4):
        raise ValueError(f"transfer table must be (256,4), got {transfer_table.shape}")
    n = spec.bins_per_axis
    dx, dy, dz = spec.dims
    n_voxels = spec.voxel_count

    parts = []
    chunks = max(1, int(workers))
    curve_base = 0
    for chunk in np.array_split(np.asarray(curves.curves, dtype=object), chunks):
        if len(chunk) == 0:
            continue
        pts = np.concatenate([c.points for c in chunk])
        ats = np.concatenate([c.attrs for c in chunk])
        pc = np.repeat(np.arange(len(chunk)) + curve_base, [len(c) for c in chunk])
        parts.append(_clip_batch(pts, ats, pc, spec.dims))
        curve_base += len(chunk)
    vox = np.concatenate([p[0] for p in parts])
    p_in = np.concatenate([p[1] for p in parts])
    p_out = np.concatenate([p[2] for p in parts])
    a_in = np.concatenate([p[3] for p in parts])
    a_out = np.concatenate([p[4] for p in parts])
    curve = np.concatenate([p[5] for p in parts])
    within = np.concatenate([p[6] for p in parts])

    lin = vox[:, 0] + dx * (vox[:, 1] + dy * vox[:, 2])
    order = np.argsort(lin, kind="stable")
    lin, vox, p_in, p_out, curve, within = (
        lin[order], vox[order], p_in[order], p_out[order], curve[order], within[order])
    attr_idx = np.clip(np.rint(255.0 * 0.5 * (a_in + a_out)), 0, 255).astype(np.uint8)[order]

    # rank within each voxel group (array is voxel-sorted)
    rank = np.arange(lin.size) - np.searchsorted(lin, lin, side="left")
    keep = rank < 255
    dropped = int(lin.size - keep.sum())
    if dropped:
        lin, vox, p_in, p_out, curve, within, attr_idx, rank = (
            lin[keep], vox[keep], p_in[keep], p_out[keep], curve[keep],
            within[keep], attr_idx[keep], rank[keep])
    lid = (rank % 32).astype(np.uint8)

    seg_count = lin.size
    width = record_width(n)
    total_bytes = 5 * n_voxels + width * seg_count
    if memory_budget is not None and total_bytes > memory_budget:
        raise MemoryError(
            f"model needs {total_bytes} bytes (5*{n_voxels} + {width}*{seg_count}), "
            f"budget is {memory_budget}")

    face_in, bin_in, q_in = _faces_and_bins(p_in, vox, n)
    face_out, bin_out, q_out = _faces_and_bins(p_out, vox, n)

    counts64 = np.bincount(lin, minlength=n_voxels)
    counts = counts64.astype(np.uint8)
    offsets = np.zeros(n_voxels, dtype=np.uint32)
    np.cumsum(counts64, dtype=np.int64, out=counts64)
    offsets[1:] = counts64[:-1].astype(np.uint32)

    packed = _pack_all(face_in, bin_in, face_out, bin_out, attr_idx, lid, n)

    return VoxelModel(
        spec=spec,
        counts=counts,
        offsets=offsets,
        packed=packed,
        transfer_table=transfer_table,
        seg_voxel=vox.astype(np.int32),
        seg_a=q_in.astype(np.float32),
        seg_b=q_out.astype(np.float32),
        seg_attr=attr_idx,
        seg_lid=lid,
        seg_face_in=face_in,
        seg_bin_in=bin_in.astype(np.uint16),
        seg_face_out=face_out,
        seg_bin_out=bin_out.astype(np.uint16),
        dropped_overflow=dropped,
        seg_curve=curve.astype(np.int32),
        seg_order=within.astype(np.int32),
    )


def count_duplicates(model: VoxelModel) -> float:
    """Fraction of segments whose (voxel, faces, bins) coincide with an
    earlier segment: quantization collapsing distinct chords onto one record."""
    s = model.segment_count
    if s == 0:
        return 0.0
    dx, dy, _ = model.spec.dims
    lin = (model.seg_voxel[:, 0].astype(np.int64)
           + dx * (model.seg_voxel[:, 1].astype(np.int64)
                   + dy * model.seg_voxel[:, 2].astype(np.int64)))
    rows = np.stack([
        lin,
        model.seg_face_in.astype(np.int64),
        model.seg_bin_in.astype(np.int64),
        model.seg_face_out.astype(np.int64),
        model.seg_bin_out.astype(np.int64),
    ], axis=1)
    unique = np.unique(rows, axis=0).shape[0]
    return float(s - unique) / float(s)
