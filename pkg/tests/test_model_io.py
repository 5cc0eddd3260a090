"""Round-trip fidelity and robustness of the .vxl binary cache."""

import struct

import numpy as np
import pytest

from linevox.illumination import AOParams, precompute_voxel_ao
from linevox.lod import build_octree, build_rep_lines, compute_density_level0
from linevox.model_io import ModelFormatError, load_vxl, save_vxl
from linevox.raycast import Camera, RenderParams, render_frame
from linevox.scene_io import Curve, CurveSet, GridSpec
from linevox.voxelizer import build_voxel_model, record_width

_HEAD_SIZE = 26          # magic + dims + log2(N) + width + segment count
_TABLE_BYTES = 256 * 4 * 4


def line_curve(p0, p1, a0=0.2, a1=0.8, k=2):
    pts = np.linspace(np.asarray(p0, float), np.asarray(p1, float), k)
    return Curve(points=pts, attrs=np.linspace(a0, a1, k))


def walk_model(dims=(6, 5, 4), n_bins=16, n_curves=12, seed=11):
    rng = np.random.default_rng(seed)
    d = np.asarray(dims, dtype=np.float64)
    curves = []
    for _ in range(n_curves):
        k = int(rng.integers(3, 8))
        pts = np.empty((k, 3))
        pts[0] = rng.random(3) * d
        for i in range(1, k):
            pts[i] = np.clip(pts[i - 1] + rng.normal(0.0, 1.2, 3), 0.05, d - 0.05)
        curves.append(Curve(points=pts, attrs=rng.random(k)))
    cs = CurveSet.from_curves(curves)
    return build_voxel_model(cs, GridSpec(dims=dims, bins_per_axis=n_bins))


_SEG_FIELDS = ("seg_voxel", "seg_a", "seg_b", "seg_attr", "seg_lid",
               "seg_face_in", "seg_bin_in", "seg_face_out", "seg_bin_out")


def assert_models_equal(m2, m1):
    assert m2.spec == m1.spec
    for name in ("counts", "offsets", "packed", "transfer_table", *_SEG_FIELDS):
        a, b = getattr(m2, name), getattr(m1, name)
        assert a.dtype == b.dtype, name
        assert np.array_equal(a, b), name


# --- round trips ---


def test_round_trip_is_bit_exact(tmp_path):
    m1 = walk_model()
    assert m1.segment_count > 30
    path = tmp_path / "m.vxl"
    save_vxl(m1, path)
    m2, octree, replines = load_vxl(path)
    assert octree is None and replines is None
    assert_models_equal(m2, m1)
    assert m2.seg_curve is None and m2.seg_order is None
    assert m2.ao is None
    assert m2.memory_bytes == m1.memory_bytes


def test_round_trip_across_bin_resolutions(tmp_path):
    widths = {4: 4, 8: 4, 16: 5, 32: 5, 64: 6, 128: 6, 256: 7}
    for n_bins, width in widths.items():
        m1 = walk_model(dims=(4, 3, 3), n_bins=n_bins, n_curves=5, seed=n_bins)
        path = tmp_path / f"m{n_bins}.vxl"
        save_vxl(m1, path)
        m2, _, _ = load_vxl(path)
        assert m2.record_width == record_width(n_bins) == width
        assert_models_equal(m2, m1)


def test_round_trip_empty_model(tmp_path):
    cs = CurveSet.from_curves([line_curve((10, 10, 10), (12, 12, 12))])
    m1 = build_voxel_model(cs, GridSpec(dims=(2, 2, 2), bins_per_axis=8))
    assert m1.segment_count == 0
    path = tmp_path / "empty.vxl"
    save_vxl(m1, path)
    m2, _, _ = load_vxl(path)
    assert_models_equal(m2, m1)
    assert m2.seg_a.shape == (0, 3)


def test_file_layout_matches_format(tmp_path):
    m = walk_model(dims=(3, 2, 2), n_bins=32, n_curves=4)
    path = tmp_path / "m.vxl"
    save_vxl(m, path)
    data = path.read_bytes()
    magic, rx, ry, rz, log2n, width, count = struct.unpack_from("<4s3IBBQ", data, 0)
    assert magic == b"VXL1"
    assert (rx, ry, rz) == m.spec.dims
    assert log2n == 5 and width == 5
    assert count == m.segment_count
    assert len(data) == _HEAD_SIZE + 5 * m.voxel_count + width * count + _TABLE_BYTES
    # headers sit right after the fixed part: u8 count + u32 offset per voxel
    c0, o0 = struct.unpack_from("<BI", data, _HEAD_SIZE)
    assert c0 == int(m.counts[0]) and o0 == int(m.offsets[0])


def test_render_after_load_matches_original(tmp_path):
    m1 = walk_model()
    path = tmp_path / "m.vxl"
    save_vxl(m1, path)
    m2, _, _ = load_vxl(path)
    cam = Camera(position=(3.0, 2.5, 14.0), target=(3.0, 2.5, 2.0),
                 up=(0, 1, 0), width=64, height=48)
    p = RenderParams(tube_radius=0.3, base_opacity=0.5, neighbor_mode="on",
                     background=(0.1, 0.1, 0.15, 1.0))
    f1 = render_frame(cam, m1, params=p)
    f2 = render_frame(cam, m2, params=p)
    assert np.array_equal(f1.image, f2.image)


# --- optional chunks ---


def _with_lod(tmp_path, ao=False):
    m1 = walk_model(dims=(8, 8, 8), n_curves=16, seed=3)
    octree = build_octree(compute_density_level0(m1))
    replines = build_rep_lines(m1, octree)
    if ao:
        m1.ao = precompute_voxel_ao(
            m1, octree, AOParams(n_rays=16, radius=4.0)).values
    path = tmp_path / "lod.vxl"
    save_vxl(m1, path, octree=octree, replines=replines)
    return m1, octree, replines, path


def test_lod_chunks_round_trip(tmp_path):
    m1, oc1, rl1, path = _with_lod(tmp_path)
    m2, oc2, rl2 = load_vxl(path)
    assert_models_equal(m2, m1)
    assert oc2.n_levels == oc1.n_levels
    for a, b in zip(oc2.levels, oc1.levels):
        assert a.dtype == np.float32 and a.shape == b.shape
        assert np.array_equal(a, b)
    assert len(rl2.levels) == len(rl1.levels)
    assert rl2.levels[0] is None
    for a, b in zip(rl2.levels[1:], rl1.levels[1:]):
        assert np.array_equal(a.valid, b.valid)
        assert np.array_equal(a.a, b.a)
        assert np.array_equal(a.b, b.b)
        assert np.array_equal(a.weight, b.weight)


def test_ao_chunk_round_trip(tmp_path):
    m1, _, _, path = _with_lod(tmp_path, ao=True)
    m2, _, _ = load_vxl(path)
    assert m2.ao is not None
    assert m2.ao.dtype == np.float32 and m2.ao.shape == m1.ao.shape
    assert np.array_equal(m2.ao, m1.ao)


def test_illuminated_render_from_loaded_file_matches(tmp_path):
    m1, oc1, rl1, path = _with_lod(tmp_path, ao=True)
    m2, oc2, rl2 = load_vxl(path)
    cam = Camera(position=(4.0, 3.5, 20.0), target=(4.0, 4.0, 4.0),
                 up=(0, 1, 0), width=48, height=36)
    p = RenderParams(base_opacity=0.7, neighbor_mode="on",
                     shadow_mode="cone", ao_mode="precomputed")
    f1 = render_frame(cam, m1, octree=oc1, replines=rl1, params=p)
    f2 = render_frame(cam, m2, octree=oc2, replines=rl2, params=p)
    assert np.array_equal(f1.image, f2.image)
    p_rep = RenderParams(base_opacity=0.7, neighbor_mode="on",
                         shadow_mode="replines", shadow_rep_level=1)
    g1 = render_frame(cam, m1, octree=oc1, replines=rl1, params=p_rep)
    g2 = render_frame(cam, m2, octree=oc2, replines=rl2, params=p_rep)
    assert np.array_equal(g1.image, g2.image)


def test_unknown_chunk_is_skipped(tmp_path):
    m1 = walk_model(dims=(3, 3, 3), n_curves=3)
    path = tmp_path / "m.vxl"
    save_vxl(m1, path)
    payload = b"\x01\x02\x03\x04\x05"
    with open(path, "ab") as fh:
        fh.write(b"XTRA" + struct.pack("<Q", len(payload)) + payload)
    m2, octree, replines = load_vxl(path)
    assert octree is None and replines is None
    assert_models_equal(m2, m1)


# --- malformed input ---


def _saved(tmp_path, **kw):
    m = walk_model(dims=(3, 2, 2), n_bins=8, n_curves=4, **kw)
    path = tmp_path / "m.vxl"
    save_vxl(m, path)
    return m, path, bytearray(path.read_bytes())


def test_bad_magic_raises(tmp_path):
    path = tmp_path / "junk.vxl"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ModelFormatError, match="magic"):
        load_vxl(path)


def test_truncation_raises_everywhere(tmp_path):
    m, path, data = _saved(tmp_path)
    for cut in (3, _HEAD_SIZE - 1, _HEAD_SIZE + 2,
                _HEAD_SIZE + 5 * m.voxel_count + 1, len(data) - 100):
        path.write_bytes(bytes(data[:cut]))
        with pytest.raises(ModelFormatError):
            load_vxl(path)


def test_record_width_mismatch_raises(tmp_path):
    _, path, data = _saved(tmp_path)
    data[17] += 1  # record-width byte of the fixed header
    path.write_bytes(bytes(data))
    with pytest.raises(ModelFormatError, match="record width"):
        load_vxl(path)


def test_non_compact_headers_raise(tmp_path):
    _, path, data = _saved(tmp_path)
    data[_HEAD_SIZE + 1] ^= 0x01  # low byte of voxel 0's offset
    path.write_bytes(bytes(data))
    with pytest.raises(ModelFormatError, match="compact"):
        load_vxl(path)


def test_out_of_range_face_raises(tmp_path):
    m, path, data = _saved(tmp_path)
    first_rec = _HEAD_SIZE + 5 * m.voxel_count
    data[first_rec] = (data[first_rec] & ~0x07) | 0x06  # face_in := 6
    path.write_bytes(bytes(data))
    with pytest.raises(ModelFormatError, match="face"):
        load_vxl(path)


def test_truncated_chunk_payload_raises(tmp_path):
    _, path, data = _saved(tmp_path)
    data += b"DENS" + struct.pack("<Q", 100) + b"\x00" * 10
    path.write_bytes(bytes(data))
    with pytest.raises(ModelFormatError, match="truncated"):
        load_vxl(path)


def test_save_rejects_foreign_octree(tmp_path):
    m = walk_model(dims=(4, 2, 2))
    alien = build_octree(np.ones((3, 3, 3), dtype=np.float32))
    with pytest.raises(ValueError, match="octree"):
        save_vxl(m, tmp_path / "x.vxl", octree=alien)


def test_save_rejects_foreign_replines(tmp_path):
    m_a = walk_model(dims=(8, 8, 8), n_curves=16, seed=3)
    rl_a = build_rep_lines(m_a, build_octree(compute_density_level0(m_a)))
    m_b = walk_model(dims=(6, 5, 4))
    with pytest.raises(ValueError, match="representative"):
        save_vxl(m_b, tmp_path / "x.vxl", replines=rl_a)


def test_save_rejects_foreign_ao(tmp_path):
    m = walk_model(dims=(4, 2, 2))
    m.ao = np.zeros((3, 3, 3), dtype=np.float32)
    with pytest.raises(ValueError, match="AO"):
        save_vxl(m, tmp_path / "x.vxl")
