"""Reference renderer, image comparison and fidelity/memory metrics."""

import math

import numpy as np
import pytest

from linevox.metrics import (brute_force_render, image_compare,
                             mean_hausdorff, mean_tangent_deviation,
                             memory_report, _pair_distance)
from linevox.raycast import Camera, RenderParams, render_frame
from linevox.scene_io import Curve, CurveSet, GridSpec, generate_tornado, normalize_to_grid
from linevox.voxelizer import build_voxel_model


def make_model(curves, dims, n_bins=8):
    cs = CurveSet.from_curves(curves)
    return cs, build_voxel_model(cs, GridSpec(dims=dims, bins_per_axis=n_bins))


def line_curve(p0, p1, a0=0.2, a1=0.8, k=2):
    pts = np.linspace(np.asarray(p0, float), np.asarray(p1, float), k)
    return Curve(points=pts, attrs=np.linspace(a0, a1, k))


# --- memory accounting ---


def test_memory_report_matches_encoding_identity():
    for n_bins, width in ((4, 4), (8, 4), (16, 5), (32, 5), (64, 6), (128, 6)):
        _, m = make_model([line_curve((-1, 1.3, 1.6), (5, 1.5, 1.4))],
                          (4, 4, 4), n_bins=n_bins)
        rep = memory_report(m)
        assert rep["bytes_per_segment"] == width
        assert rep["header_bytes"] == 5 * 64
        assert rep["segment_bytes"] == width * m.segment_count
        assert rep["total"] == rep["header_bytes"] + rep["segment_bytes"]
        assert rep["total"] == m.memory_bytes


# --- image comparison ---


def test_image_compare_identical():
    img = np.random.default_rng(3).random((8, 10, 4)).astype(np.float32)
    rep = image_compare(img, img)
    assert rep["max_diff"] == 0.0
    assert rep["fraction_close"] == 1.0
    assert rep["psnr"] == math.inf


def test_image_compare_known_diffs():
    a = np.zeros((1, 2, 4), dtype=np.float64)
    b = a.copy()
    b[0, 0, 1] = 1.0 / 255.0   # pixel 0 stays within tolerance
    b[0, 1, 2] = 3.0 / 255.0   # pixel 1 exceeds it
    rep = image_compare(a, b)
    assert rep["max_diff"] == pytest.approx(3.0 / 255.0, abs=1e-15)
    assert rep["fraction_close"] == 0.5
    mse = ((1.0 / 255.0) ** 2 + (3.0 / 255.0) ** 2) / 8.0
    assert rep["psnr"] == pytest.approx(10.0 * math.log10(1.0 / mse), abs=1e-9)


def test_image_compare_inverted_pair_is_far():
    rng = np.random.default_rng(5)
    a = (rng.random((16, 16, 4)) > 0.5).astype(np.float64)
    b = 1.0 - a
    rep = image_compare(a, b)
    assert rep["max_diff"] == 1.0
    assert rep["fraction_close"] == 0.0
    assert rep["psnr"] == pytest.approx(0.0, abs=1e-9)


def test_image_compare_accepts_uint8_and_frames():
    a8 = np.zeros((2, 2, 4), dtype=np.uint8)
    b8 = a8.copy()
    b8[0, 0, 0] = 2
    rep = image_compare(a8, b8)
    assert rep["max_diff"] == pytest.approx(2.0 / 255.0, abs=1e-15)
    assert rep["fraction_close"] == 1.0


def test_image_compare_shape_mismatch_raises():
    with pytest.raises(ValueError):
        image_compare(np.zeros((2, 2, 4)), np.zeros((2, 3, 4)))


# --- reference renderer ---


def _cross_scene():
    curves = [
        line_curve((-0.5, 1.0, 1.1), (4.5, 1.2, 0.9)),
        line_curve((0.8, -0.5, 1.0), (1.1, 2.5, 1.0)),
        Curve(points=np.array([[-0.3, 0.4, 0.4], [2.0, 1.6, 1.0],
                               [4.3, 0.4, 1.6]]),
              attrs=np.array([0.1, 0.5, 0.9])),
    ]
    cs, m = make_model(curves, (4, 2, 2), n_bins=16)
    cam = Camera(position=(2.0, 1.0, 9.0), target=(2.0, 1.0, 1.0),
                 up=(0, 1, 0), width=80, height=60)
    return cs, m, cam


def test_brute_force_empty_scene_is_background():
    _, m = make_model([line_curve((10, 10, 10), (12, 12, 12))], (2, 2, 2))
    assert m.segment_count == 0
    cam = Camera(position=(1.0, -6.0, 1.0), target=(1.0, 1.0, 1.0),
                 width=16, height=12)
    p = RenderParams(background=(0.2, 0.3, 0.4, 1.0))
    f = brute_force_render(cam, m, params=p)
    assert np.allclose(f.image[..., 0], 0.2, atol=1e-6)
    assert np.allclose(f.image[..., 3], 1.0)
    assert f.stats["intersection_tests"] == 0


def test_brute_force_matches_renderer_bitwise():
    _, m, cam = _cross_scene()
    p = RenderParams(tube_radius=0.25, base_opacity=0.4, neighbor_mode="on",
                     background=(0.05, 0.05, 0.1, 1.0))
    ours = render_frame(cam, m, params=p)
    ref = brute_force_render(cam, m, params=p)
    assert np.array_equal(ours.image, ref.image)
    assert ours.stats["window_overflow"] == 0
    assert ref.stats["window_overflow"] == 0


def test_brute_force_test_count_is_pixels_times_primitives():
    _, m, cam = _cross_scene()
    pixels = cam.width * cam.height
    with_j = brute_force_render(cam, m, params=RenderParams())
    assert with_j.stats["intersection_tests"] == pixels * 3 * m.segment_count
    no_j = brute_force_render(cam, m, params=RenderParams(joint_spheres=False))
    assert no_j.stats["intersection_tests"] == pixels * m.segment_count


# --- geometry fidelity ---


def test_hausdorff_identical_polyline_is_zero():
    # 0.375 is a bin center at N=4, so quantization reproduces the line; the
    # build input overhangs the grid (terminal pieces are never stored) and
    # the probe is the stored in-grid portion
    _, m = make_model([line_curve((-0.5, 0.375, 0.375), (4.5, 0.375, 0.375))],
                      (4, 1, 1), n_bins=4)
    probe = CurveSet.from_curves(
        [line_curve((0.0, 0.375, 0.375), (4.0, 0.375, 0.375))])
    rep = mean_hausdorff(probe, m)
    assert rep["skipped"] == 0
    assert rep["max"] < 1e-9


def test_hausdorff_quarter_shift_is_exact():
    _, m = make_model(
        [line_curve((-0.5, 0.375, 0.375), (4.5, 0.375, 0.375))],
        (4, 1, 1), n_bins=4)
    probe = CurveSet.from_curves(
        [line_curve((0.0, 0.625, 0.375), (4.0, 0.625, 0.375))])
    rep = mean_hausdorff(probe, m)
    assert rep["mean"] == pytest.approx(0.25, abs=1e-12)
    assert rep["max"] == pytest.approx(0.25, abs=1e-12)


def test_hausdorff_skips_and_counts_chordless_curves():
    inside = line_curve((-0.5, 0.375, 0.375), (4.5, 0.375, 0.375))
    outside = line_curve((30.0, 30.0, 30.0), (33.0, 30.0, 30.0))
    _, m = make_model([inside, outside], (4, 1, 1), n_bins=4)
    probe = CurveSet.from_curves(
        [line_curve((0.0, 0.375, 0.375), (4.0, 0.375, 0.375)), outside])
    rep = mean_hausdorff(probe, m)
    assert rep["curves"] == 1
    assert rep["skipped"] == 1
    assert rep["max"] < 1e-9


def test_hausdorff_bounded_by_voxel_diagonal():
    rng = np.random.default_rng(17)
    curves = []
    for _ in range(50):
        start = rng.uniform(2.0, 14.0, size=3)
        steps = rng.normal(scale=0.9, size=(24, 3))
        pts = np.clip(start + np.cumsum(steps, axis=0), 0.6, 15.4)
        curves.append(Curve(points=np.vstack([start, pts]),
                            attrs=rng.random(25)))
    cs, m = make_model(curves, (16, 16, 16), n_bins=8)
    rep = mean_hausdorff(cs, m)
    assert rep["skipped"] == 0
    assert rep["max"] <= math.sqrt(3.0) + 1e-12


def test_pair_distance_is_symmetric():
    rng = np.random.default_rng(29)
    a = rng.uniform(0, 8, size=(12, 3))
    b = rng.uniform(0, 8, size=(9, 3))
    assert _pair_distance(a, b) == _pair_distance(b, a)
    assert _pair_distance(a, a) < 1e-9


def test_tangent_identical_polyline_is_zero():
    cs, m = make_model([line_curve((-0.5, 0.375, 0.375), (4.5, 0.375, 0.375))],
                       (4, 1, 1), n_bins=4)
    assert mean_tangent_deviation(cs, m) == pytest.approx(0.0, abs=1e-6)


def test_tangent_forty_five_degree_chord():
    # the overhanging diagonal crosses x=0 at (0,.375,.375) and y=1 at
    # (.625,1,.375); both are bin centers at N=4, so the stored chord
    # direction is exactly (1,1,0)/sqrt(2); the probe polyline runs along x
    _, m = make_model([line_curve((-0.25, 0.125, 0.375), (0.875, 1.25, 0.375))],
                      (1, 1, 1), n_bins=4)
    assert m.segment_count == 1
    probe = CurveSet.from_curves(
        [line_curve((0.0, 0.375, 0.375), (0.625, 0.375, 0.375))])
    assert mean_tangent_deviation(probe, m) == pytest.approx(45.0, abs=1e-9)


def test_tangent_deviation_improves_with_finer_bins():
    cs = normalize_to_grid(generate_tornado(20, 80, seed=5),
                           GridSpec(dims=(32, 32, 32)))
    coarse = build_voxel_model(cs, GridSpec(dims=(32, 32, 32), bins_per_axis=4))
    fine = build_voxel_model(cs, GridSpec(dims=(32, 32, 32), bins_per_axis=32))
    assert mean_tangent_deviation(cs, fine) <= mean_tangent_deviation(cs, coarse)
