"""Binary cache for voxel models and their level-of-detail companions.

Layout (all little-endian): magic "VXL1"; u32 r_x, r_y, r_z; u8 log2(N);
u8 record_width; u64 segment_count; the per-voxel header array (u8 count +
u32 offset each, 5 bytes per voxel); the packed segment records; the
256 x 4 f32 transfer table.  Optional tagged chunks follow, each a 4-byte
tag plus a u64 payload size: "DENS" carries the density octree, "REPL" the
representative lines, "AOFD" a precomputed per-voxel occlusion field.
Unknown tags are skipped so the format can grow.

Only the encoded model is stored.  The per-segment lookup caches are rebuilt
on load by decoding the records, which reproduces the builder's arrays bit
for bit (bin centers are exact in float32).  Curve provenance (`seg_curve`,
`seg_order`) is build-only state and does not survive the cache.
"""

from __future__ import annotations

import struct
from typing import Optional

import numpy as np

from .lod import DensityOctree, RepLevel, RepLineField
from .scene_io import GridSpec
from .voxelizer import (
    _FACE_AXIS,
    _FACE_SIDE,
    _FACE_U,
    _FACE_V,
    VoxelModel,
    _field_layout,
    record_width,
)

VXL_MAGIC = b"VXL1"

_HEAD = struct.Struct("<4s3IBBQ")
_TAG = struct.Struct("<4sQ")
_U32 = struct.Struct("<I")
_U32X3 = struct.Struct("<3I")
_HDR_DTYPE = np.dtype([("count", "u1"), ("offset", "<u4")])


class ModelFormatError(ValueError):
    """Malformed .vxl file: bad magic, inconsistent header, or short data."""


class _Cursor:
    """Sequential reader over a byte buffer that turns short reads into
    format errors instead of silent truncation."""

    def __init__(self, data, source: str):
        self.data = data
        self.off = 0
        self.source = source

    @property
    def remaining(self) -> int:
        return len(self.data) - self.off

    def take(self, nbytes: int):
        if nbytes > self.remaining:
            raise ModelFormatError(
                f"{self.source}: truncated ({nbytes} bytes needed at offset {self.off}, "
                f"{self.remaining} left)")
        view = memoryview(self.data)[self.off:self.off + nbytes]
        self.off += nbytes
        return view

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(count * dt.itemsize), dtype=dt).copy()


def _ceil_half(dims) -> tuple:
    return tuple((int(d) + 1) // 2 for d in dims)


# --- writing ------------------------------------------------------------------

def _write_chunk(fh, tag: bytes, payload: bytes) -> None:
    fh.write(_TAG.pack(tag, len(payload)))
    fh.write(payload)


def _encode_octree(octree: DensityOctree, grid_dims) -> bytes:
    dx, dy, dz = grid_dims
    if octree.levels[0].shape != (dz, dy, dx):
        raise ValueError(
            f"octree level 0 is {octree.levels[0].shape}, the model grid implies {(dz, dy, dx)}")
    parts = [_U32.pack(octree.n_levels)]
    for f in octree.levels:
        lz, ly, lx = f.shape
        parts.append(_U32X3.pack(lx, ly, lz))
        parts.append(np.ascontiguousarray(f, dtype="<f4").tobytes())
    return b"".join(parts)


def _encode_replines(rep: RepLineField, grid_dims) -> bytes:
    parts = [_U32.pack(len(rep.levels) - 1)]
    dims = tuple(grid_dims)
    for level in range(1, len(rep.levels)):
        dims = _ceil_half(dims)
        lvl = rep.levels[level]
        v = dims[0] * dims[1] * dims[2]
        if lvl.valid.shape != (v,):
            raise ValueError(
                f"representative level {level} holds {lvl.valid.shape[0]} voxels, "
                f"the model grid implies {v}")
        parts.append(_U32X3.pack(*dims))
        parts.append(np.ascontiguousarray(lvl.valid, dtype=np.uint8).tobytes())
        parts.append(np.ascontiguousarray(lvl.a, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(lvl.b, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(lvl.weight, dtype="<f4").tobytes())
    return b"".join(parts)


def save_vxl(model: VoxelModel, path, octree: Optional[DensityOctree] = None,
             replines: Optional[RepLineField] = None) -> None:
    """Write a model to `path`, optionally bundling its density octree and
    representative lines as chunks.  A precomputed AO field attached to the
    model travels along automatically."""
    spec = model.spec
    rx, ry, rz = spec.dims
    headers = np.empty(spec.voxel_count, dtype=_HDR_DTYPE)
    headers["count"] = model.counts
    headers["offset"] = model.offsets
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(VXL_MAGIC, rx, ry, rz, spec.log2_bins,
                            model.record_width, model.segment_count))
        fh.write(headers.tobytes())
        fh.write(np.ascontiguousarray(model.packed, dtype=np.uint8).tobytes())
        fh.write(np.ascontiguousarray(model.transfer_table, dtype="<f4").tobytes())
        if octree is not None:
            _write_chunk(fh, b"DENS", _encode_octree(octree, spec.dims))
        if replines is not None:
            _write_chunk(fh, b"REPL", _encode_replines(replines, spec.dims))
        if model.ao is not None:
            if model.ao.shape != (rz, ry, rx):
                raise ValueError(
                    f"AO field is {model.ao.shape}, the model grid implies {(rz, ry, rx)}")
            _write_chunk(fh, b"AOFD", np.ascontiguousarray(model.ao, dtype="<f4").tobytes())


# --- reading ------------------------------------------------------------------

def _decode_records(packed: np.ndarray, seg_count: int, n: int):
    """Vectorized unpack of every record: pad each to 8 bytes, view as u64,
    then shift and mask the fields out (inverse of the builder's packer)."""
    width = record_width(n)
    buf = np.zeros((seg_count, 8), dtype=np.uint8)
    buf[:, :width] = packed.reshape(seg_count, width)
    value = buf.view("<u8").ravel()
    bb, o_bin_in, o_face_out, o_bin_out, o_attr, o_lid = _field_layout(n)
    bin_mask = np.uint64((1 << bb) - 1)
    face_in = (value & np.uint64(7)).astype(np.uint8)
    bin_in = ((value >> np.uint64(o_bin_in)) & bin_mask).astype(np.int64)
    face_out = ((value >> np.uint64(o_face_out)) & np.uint64(7)).astype(np.uint8)
    bin_out = ((value >> np.uint64(o_bin_out)) & bin_mask).astype(np.int64)
    attr = ((value >> np.uint64(o_attr)) & np.uint64(0xFF)).astype(np.uint8)
    lid = ((value >> np.uint64(o_lid)) & np.uint64(0x1F)).astype(np.uint8)
    return face_in, bin_in, face_out, bin_out, attr, lid


def _bin_centers(face: np.ndarray, code: np.ndarray, vox: np.ndarray, n: int) -> np.ndarray:
    """Exact float32 endpoint positions from face IDs and bin codes."""
    rows = np.arange(face.shape[0])
    f = face.astype(np.int64)
    bu = code % n
    bv = code // n
    q = np.empty((face.shape[0], 3), dtype=np.float64)
    q[rows, _FACE_AXIS[f]] = _FACE_SIDE[f]
    q[rows, _FACE_U[f]] = (bu + 0.5) / n
    q[rows, _FACE_V[f]] = (bv + 0.5) / n
    return (q + vox).astype(np.float32)


def _decode_octree(payload, dims, source: str) -> DensityOctree:
    rd = _Cursor(payload, source)
    (n_levels,) = rd.unpack(_U32)
    if n_levels < 1:
        raise ModelFormatError(f"{source}: octree chunk with zero levels")
    expect = tuple(dims)
    levels = []
    for level in range(n_levels):
        lx, ly, lz = rd.unpack(_U32X3)
        if (lx, ly, lz) != expect:
            raise ModelFormatError(
                f"{source}: octree level {level} is {(lx, ly, lz)}, expected {expect}")
        levels.append(rd.array("<f4", lx * ly * lz).reshape(lz, ly, lx))
        expect = _ceil_half(expect)
    if rd.remaining:
        raise ModelFormatError(f"{source}: {rd.remaining} trailing bytes in octree chunk")
    return DensityOctree(levels=levels)


def _decode_replines(payload, dims, source: str) -> RepLineField:
    rd = _Cursor(payload, source)
    (n_stored,) = rd.unpack(_U32)
    expect = tuple(dims)
    levels: list = [None]
    for level in range(1, n_stored + 1):
        expect = _ceil_half(expect)
        lx, ly, lz = rd.unpack(_U32X3)
        if (lx, ly, lz) != expect:
            raise ModelFormatError(
                f"{source}: representative level {level} is {(lx, ly, lz)}, expected {expect}")
        v = lx * ly * lz
        valid = rd.array(np.uint8, v) != 0
        a = rd.array("<f4", 3 * v).reshape(v, 3)
        b = rd.array("<f4", 3 * v).reshape(v, 3)
        weight = rd.array("<f4", v)
        levels.append(RepLevel(valid=valid, a=a, b=b, weight=weight))
    if rd.remaining:
        raise ModelFormatError(f"{source}: {rd.remaining} trailing bytes in representatives chunk")
    return RepLineField(levels=levels)


def _decode_ao(payload, shape, source: str) -> np.ndarray:
    rz, ry, rx = shape
    rd = _Cursor(payload, source)
    field = rd.array("<f4", rz * ry * rx).reshape(rz, ry, rx)
    if rd.remaining:
        raise ModelFormatError(f"{source}: AO chunk does not match the grid size")
    return field


def load_vxl(path):
    """Read a .vxl cache written by :func:`save_vxl`.

    Returns (model, octree, replines); the last two are None when the file
    carries no matching chunk.  An "AOFD" chunk is attached to the model's
    `ao` field.  The rebuilt per-segment caches are bit-identical to the
    builder's, so renders from a loaded model match the original exactly;
    `seg_curve`/`seg_order` are None (fidelity metrics need a live build).
    """
    source = str(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEAD.size or data[:4] != VXL_MAGIC:
        raise ModelFormatError(f"{source}: bad magic (expected {VXL_MAGIC!r})")
    rd = _Cursor(data, source)
    _, rx, ry, rz, log2n, width, seg_count = rd.unpack(_HEAD)
    if not 1 <= log2n <= 8:
        raise ModelFormatError(f"{source}: log2(N)={log2n} outside [1,8]")
    spec = GridSpec(dims=(rx, ry, rz), bins_per_axis=1 << log2n)
    n = spec.bins_per_axis
    if width != record_width(n):
        raise ModelFormatError(
            f"{source}: record width {width} does not match N={n} "
            f"(expected {record_width(n)})")

    headers = rd.array(_HDR_DTYPE, spec.voxel_count)
    counts = np.ascontiguousarray(headers["count"])
    offsets = np.ascontiguousarray(headers["offset"])
    # the writer stores segments grouped by voxel in scan order, so offsets
    # must be the exclusive cumulative sum of counts; anything else means a
    # corrupt file (and would break the repeat-based voxel reconstruction)
    c64 = counts.astype(np.int64)
    expected_off = np.zeros(spec.voxel_count, dtype=np.int64)
    np.cumsum(c64[:-1], out=expected_off[1:])
    if int(c64.sum()) != seg_count or not np.array_equal(expected_off, offsets):
        raise ModelFormatError(f"{source}: headers do not describe a compact segment array")

    packed = rd.array(np.uint8, width * seg_count)
    table = rd.array("<f4", 256 * 4).reshape(256, 4)

    lin = np.repeat(np.arange(spec.voxel_count, dtype=np.int64), c64)
    vox = np.empty((seg_count, 3), dtype=np.int32)
    vox[:, 0] = lin % rx
    vox[:, 1] = (lin // rx) % ry
    vox[:, 2] = lin // (rx * ry)

    face_in, bin_in, face_out, bin_out, attr, lid = _decode_records(packed, seg_count, n)
    if np.any(face_in > 5) or np.any(face_out > 5):
        raise ModelFormatError(f"{source}: segment record with face ID > 5")

    model = VoxelModel(
        spec=spec,
        counts=counts,
        offsets=offsets,
        packed=packed,
        transfer_table=table,
        seg_voxel=vox,
        seg_a=_bin_centers(face_in, bin_in, vox, n),
        seg_b=_bin_centers(face_out, bin_out, vox, n),
        seg_attr=attr,
        seg_lid=lid,
        seg_face_in=face_in,
        seg_bin_in=bin_in.astype(np.uint16),
        seg_face_out=face_out,
        seg_bin_out=bin_out.astype(np.uint16),
    )

    octree = None
    replines = None
    while rd.remaining:
        tag, size = rd.unpack(_TAG)
        payload = rd.take(size)
        if tag == b"DENS":
            octree = _decode_octree(payload, (rx, ry, rz), source)
        elif tag == b"REPL":
            replines = _decode_replines(payload, (rx, ry, rz), source)
        elif tag == b"AOFD":
            model.ao = _decode_ao(payload, (rz, ry, rx), source)
        # unknown tags are skipped so newer writers stay readable
    return model, octree, replines
