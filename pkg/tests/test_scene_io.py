import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linevox.scene_io import (
    Curve,
    CurveFormatError,
    CurveSet,
    GridSpec,
    generate_tornado,
    grid_spec_for,
    load_lines_binary,
    load_obj_lines,
    normalize_to_grid,
    save_lines_binary,
    tornado_bound,
)


def make_set(*point_lists):
    curves = []
    for pts in point_lists:
        pts = np.asarray(pts, dtype=np.float64)
        curves.append(Curve(points=pts, attrs=np.zeros(len(pts))))
    return CurveSet.from_curves(curves)


# --- Curve / CurveSet validation -------------------------------------------

def test_curve_rejects_short_and_malformed():
    with pytest.raises(ValueError):
        Curve(points=np.zeros((1, 3)), attrs=np.zeros(1))
    with pytest.raises(ValueError):
        Curve(points=np.zeros((3, 2)), attrs=np.zeros(3))
    with pytest.raises(ValueError):
        Curve(points=np.zeros((3, 3)), attrs=np.zeros(2))
    with pytest.raises(ValueError):
        Curve(points=np.zeros((2, 3)), attrs=np.array([0.0, 1.5]))


def test_empty_curveset_rejected():
    with pytest.raises(ValueError, match="no curves"):
        CurveSet.from_curves([])


def test_bbox_is_tight():
    cs = make_set([[0, 0, 0], [1, 2, 3]], [[-1, 0.5, 0], [0, 0, 4]])
    assert np.array_equal(cs.bbox[0], [-1, 0, 0])
    assert np.array_equal(cs.bbox[1], [1, 2, 4])


# --- GridSpec ----------------------------------------------------------------

def test_grid_spec_validation():
    GridSpec(dims=(4, 4, 4), bins_per_axis=32)
    with pytest.raises(ValueError):
        GridSpec(dims=(0, 4, 4))
    with pytest.raises(ValueError):
        GridSpec(dims=(4, 4, 4), bins_per_axis=3)
    with pytest.raises(ValueError):
        GridSpec(dims=(4, 4, 4), bins_per_axis=512)


def test_grid_spec_log2_bins():
    assert GridSpec(dims=(1, 1, 1), bins_per_axis=4).log2_bins == 2
    assert GridSpec(dims=(1, 1, 1), bins_per_axis=32).log2_bins == 5
    assert GridSpec(dims=(1, 1, 1), bins_per_axis=128).log2_bins == 7


def test_grid_spec_for_preserves_aspect():
    cs = make_set([[0, 0, 0], [10, 5, 2.5]])
    spec = grid_spec_for(cs, 128)
    assert spec.dims == (128, 64, 32)
    # degenerate axes clamp to one voxel
    flat = make_set([[0, 0, 0], [10, 0, 0]])
    assert grid_spec_for(flat, 64).dims == (64, 1, 1)


# --- OBJ loading -------------------------------------------------------------

OBJ_SAMPLE = """\
# sample polylines
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
# attr 0.1 0.2 0.3 0.4
l 1 2 3
l -1 -2
"""


def test_load_obj_lines(tmp_path):
    p = tmp_path / "a.obj"
    p.write_text(OBJ_SAMPLE)
    cs = load_obj_lines(p)
    assert cs.n_curves == 2
    assert np.array_equal(cs.curves[0].points, [[0, 0, 0], [1, 0, 0], [1, 1, 0]])
    assert np.allclose(cs.curves[0].attrs, [0.1, 0.2, 0.3])
    # negative indices count back from the current vertex list
    assert np.array_equal(cs.curves[1].points, [[0, 1, 0], [1, 1, 0]])
    assert np.allclose(cs.curves[1].attrs, [0.4, 0.3])


def test_load_obj_errors(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nl 1 5\n")
    with pytest.raises(CurveFormatError, match="index 5"):
        load_obj_lines(p)
    p.write_text("v 0 0 0\nv 1 1 1\nl 0 1\n")
    with pytest.raises(CurveFormatError, match="1-based"):
        load_obj_lines(p)
    p.write_text("v 0 0\n")
    with pytest.raises(CurveFormatError, match="3 coordinates"):
        load_obj_lines(p)
    p.write_text("v 0 0 0\nv 1 1 1\nl 1\n")
    with pytest.raises(CurveFormatError, match=">= 2 indices"):
        load_obj_lines(p)


def test_load_obj_drops_duplicate_vertices(tmp_path, caplog):
    p = tmp_path / "dup.obj"
    p.write_text("v 0 0 0\nv 0 0 0\nv 1 0 0\nl 1 2 3\nl 1 2\n")
    with caplog.at_level("WARNING"):
        cs = load_obj_lines(p)
    # first curve keeps two distinct vertices, second collapses entirely
    assert cs.n_curves == 1
    assert np.array_equal(cs.curves[0].points, [[0, 0, 0], [1, 0, 0]])
    assert "dropped" in caplog.text


def test_load_obj_all_degenerate_raises(tmp_path):
    p = tmp_path / "flat.obj"
    p.write_text("v 2 2 2\nv 2 2 2\nl 1 2\n")
    with pytest.raises(CurveFormatError, match="no curves"):
        load_obj_lines(p)


# --- .lines binary roundtrip -------------------------------------------------

def test_lines_binary_bad_magic(tmp_path):
    p = tmp_path / "x.lines"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CurveFormatError, match="magic"):
        load_lines_binary(p)


def test_lines_binary_truncated(tmp_path):
    cs = make_set([[0, 0, 0], [1, 1, 1], [2, 0, 1]])
    p = tmp_path / "x.lines"
    save_lines_binary(cs, p)
    blob = p.read_bytes()
    p.write_bytes(blob[:-5])
    with pytest.raises(CurveFormatError, match="truncated"):
        load_lines_binary(p)


@st.composite
def f32_curve_sets(draw):
    n_curves = draw(st.integers(1, 4))
    curves = []
    for _ in range(n_curves):
        n = draw(st.integers(2, 6))
        pts = draw(
            st.lists(
                st.tuples(*[st.floats(-100, 100, width=32) for _ in range(3)]),
                min_size=n, max_size=n,
            )
        )
        pts = np.array(pts, dtype=np.float32).astype(np.float64)
        # separate consecutive duplicates so nothing is dropped on reload
        for i in range(1, len(pts)):
            if np.array_equal(pts[i], pts[i - 1]):
                pts[i, 0] = np.float32(pts[i, 0] + 1.0)
        at = draw(st.lists(st.floats(0, 1, width=32), min_size=n, max_size=n))
        at = np.array(at, dtype=np.float32).astype(np.float64)
        curves.append(Curve(points=pts, attrs=at))
    return CurveSet.from_curves(curves)


@settings(max_examples=50, deadline=None)
@given(f32_curve_sets())
def test_lines_binary_roundtrip_bit_exact(tmp_path_factory, cs):
    p = tmp_path_factory.mktemp("rt") / "rt.lines"
    save_lines_binary(cs, p)
    back = load_lines_binary(p)
    assert back.n_curves == cs.n_curves
    for a, b in zip(cs.curves, back.curves):
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.attrs, b.attrs)


# --- tornado -----------------------------------------------------------------

def test_tornado_shape_and_determinism():
    a = generate_tornado(8, 40, seed=3)
    b = generate_tornado(8, 40, seed=3)
    c = generate_tornado(8, 40, seed=4)
    assert a.n_curves == 8
    assert all(len(cv) == 40 for cv in a.curves)
    for x, y in zip(a.curves, b.curves):
        assert np.array_equal(x.points, y.points)
        assert np.array_equal(x.attrs, y.attrs)
    assert any(not np.array_equal(x.points, y.points) for x, y in zip(a.curves, c.curves))


def test_tornado_stays_in_analytic_bound():
    cs = generate_tornado(32, 400, seed=11)
    lo, hi = tornado_bound()
    assert np.all(cs.bbox[0] >= lo) and np.all(cs.bbox[1] <= hi)
    for cv in cs.curves:
        assert np.all(cv.attrs >= 0.0) and np.all(cv.attrs <= 1.0)


def test_tornado_rejects_bad_args():
    with pytest.raises(ValueError):
        generate_tornado(0, 10, seed=0)
    with pytest.raises(ValueError):
        generate_tornado(1, 1, seed=0)


# --- normalization -----------------------------------------------------------

def test_normalize_fits_and_is_uniform():
    cs = make_set([[2, 2, 2], [6, 4, 3]])
    spec = GridSpec(dims=(16, 16, 16))
    g = normalize_to_grid(cs, spec)
    dims = np.array(spec.dims, dtype=float)
    assert np.all(g.bbox[0] >= -1e-9) and np.all(g.bbox[1] <= dims + 1e-9)
    # longest axis fills the grid, others are centered
    ext = g.bbox[1] - g.bbox[0]
    assert ext[0] == pytest.approx(16.0)
    assert np.allclose(g.bbox[0] + g.bbox[1], dims)
    # a uniform scale preserves distance ratios
    d_orig = np.linalg.norm(cs.curves[0].points[1] - cs.curves[0].points[0])
    d_new = np.linalg.norm(g.curves[0].points[1] - g.curves[0].points[0])
    assert d_new / d_orig == pytest.approx(16.0 / 4.0)


def test_normalize_idempotent_bit_exact():
    cs = generate_tornado(4, 50, seed=1)
    spec = GridSpec(dims=(64, 64, 64))
    g1 = normalize_to_grid(cs, spec)
    g2 = normalize_to_grid(g1, spec)
    for a, b in zip(g1.curves, g2.curves):
        assert np.array_equal(a.points, b.points)


def test_normalize_rejects_point_cloud_bbox():
    pts = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    # bypass the duplicate filter: build a degenerate set directly
    c = Curve(points=np.array([[1.0, 1, 1], [1, 1, 1 + 1e-300]]), attrs=np.zeros(2))
    cs = CurveSet.from_curves([c])
    cs.bbox = np.stack([pts[0], pts[0]])
    with pytest.raises(ValueError, match="zero extent"):
        normalize_to_grid(cs, GridSpec(dims=(8, 8, 8)))


def test_normalize_planar_set_ok():
    cs = make_set([[0, 0, 0], [4, 2, 0]])  # zero extent on z only
    g = normalize_to_grid(cs, GridSpec(dims=(8, 8, 8)))
    assert np.all(np.isfinite(g.all_points()))
    assert g.bbox[1][0] - g.bbox[0][0] == pytest.approx(8.0)
