import numpy as np
import pytest

from linevox.scene_io import Curve, CurveSet, GridSpec
from linevox.lod import (
    DensityOctree,
    build_octree,
    build_rep_lines,
    compute_density_level0,
    representative_line,
)
from linevox.voxelizer import VoxelModel, build_voxel_model, default_transfer_table, record_width


def fake_model(dims, n_bins, seg_voxel, seg_a, seg_b, seg_attr, table=None):
    """Hand-assembled model carrying only what density computation reads."""
    spec = GridSpec(dims=dims, bins_per_axis=n_bins)
    s = len(seg_attr)
    if table is None:
        table = default_transfer_table()
    z8 = np.zeros(s, dtype=np.uint8)
    return VoxelModel(
        spec=spec,
        counts=np.zeros(spec.voxel_count, dtype=np.uint8),
        offsets=np.zeros(spec.voxel_count, dtype=np.uint32),
        packed=np.zeros(s * record_width(n_bins), dtype=np.uint8),
        transfer_table=np.asarray(table, dtype=np.float32),
        seg_voxel=np.asarray(seg_voxel, dtype=np.int32),
        seg_a=np.asarray(seg_a, dtype=np.float32),
        seg_b=np.asarray(seg_b, dtype=np.float32),
        seg_attr=np.asarray(seg_attr, dtype=np.uint8),
        seg_lid=z8,
        seg_face_in=z8,
        seg_bin_in=z8.astype(np.uint16),
        seg_face_out=z8,
        seg_bin_out=z8.astype(np.uint16),
    )


def random_curves(seed, n=6, dims=(8, 8, 8)):
    rng = np.random.default_rng(seed)
    curves = []
    for _ in range(n):
        m = rng.integers(4, 9)
        p0 = 0.5 + rng.random(3) * (np.asarray(dims, dtype=float) - 1.0)
        steps = rng.normal(0, 1.0, (m - 1, 3))
        pts = np.vstack([p0, p0 + np.cumsum(steps, axis=0)])
        pts = np.clip(pts, 0.1, np.asarray(dims, dtype=float) - 0.1)
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
        pts = pts[keep]
        if len(pts) < 2:
            continue
        curves.append(Curve(points=pts, attrs=rng.random(len(pts))))
    return CurveSet.from_curves(curves)


# --- density level 0 -----------------------------------------------------------

def test_density_formula_direct():
    table = np.zeros((256, 4), dtype=np.float32)
    table[:, 3] = 0.5
    m = fake_model(
        dims=(2, 2, 2), n_bins=4,
        seg_voxel=[[1, 0, 0], [1, 0, 0]],
        seg_a=[[1.0, 0.5, 0.5], [1.0, 0.2, 0.2]],
        seg_b=[[1.5, 0.5, 0.5], [2.0, 0.2, 0.2]],
        seg_attr=[10, 20],
        table=table,
    )
    rho = compute_density_level0(m)
    assert rho.shape == (2, 2, 2)
    assert rho[0, 0, 1] == pytest.approx(0.75)  # (0.5 + 1.0) * 0.5
    assert rho.sum() == pytest.approx(0.75)  # every other voxel empty


def test_density_matches_per_segment_oracle():
    cs = random_curves(3)
    spec = GridSpec(dims=(8, 8, 8), bins_per_axis=16)
    m = build_voxel_model(cs, spec)
    rho = compute_density_level0(m)
    want = np.zeros((8, 8, 8), dtype=np.float64)
    for i in range(m.segment_count):
        x, y, z = m.seg_voxel[i]
        length = np.linalg.norm(m.seg_b[i].astype(np.float64) - m.seg_a[i].astype(np.float64))
        want[z, y, x] += length * float(m.transfer_table[m.seg_attr[i], 3])
    assert np.allclose(rho, want, rtol=1e-5, atol=1e-7)
    assert np.all(rho >= 0)


def test_density_opaque_bound():
    cs = random_curves(9)
    spec = GridSpec(dims=(6, 6, 6))
    table = default_transfer_table()
    table[:, 3] = 1.0
    m = build_voxel_model(cs, spec, transfer_table=table)
    rho = compute_density_level0(m)
    assert rho.max() <= 255 * np.sqrt(3.0)


# --- octree --------------------------------------------------------------------

def oracle_coarsen(f):
    """Per-parent mean over existing children, same corner order as the
    implementation, scalar float32 arithmetic."""
    dz, dy, dx = f.shape
    out = np.zeros(((dz + 1) // 2, (dy + 1) // 2, (dx + 1) // 2), dtype=np.float32)
    for pz in range(out.shape[0]):
        for py in range(out.shape[1]):
            for px in range(out.shape[2]):
                acc = np.float32(0.0)
                cnt = np.float32(0.0)
                for oz in (0, 1):
                    for oy in (0, 1):
                        for ox in (0, 1):
                            cz, cy, cx = 2 * pz + oz, 2 * py + oy, 2 * px + ox
                            if cz < dz and cy < dy and cx < dx:
                                acc = np.float32(acc + f[cz, cy, cx])
                                cnt = np.float32(cnt + 1.0)
                out[pz, py, px] = np.float32(acc / cnt)
    return out


def test_octree_uniform_and_single_spike():
    t = build_octree(np.full((2, 2, 2), 3.25, dtype=np.float32))
    assert t.n_levels == 2
    assert t.levels[1][0, 0, 0] == np.float32(3.25)
    f = np.zeros((2, 2, 2), dtype=np.float32)
    f[0, 0, 0] = 1.0
    assert build_octree(f).levels[1][0, 0, 0] == np.float32(0.125)


def test_octree_levels_count():
    assert build_octree(np.zeros((64, 64, 64), dtype=np.float32)).n_levels == 7
    assert build_octree(np.zeros((8, 32, 16), dtype=np.float32)).n_levels == 6
    assert build_octree(np.zeros((1, 1, 1), dtype=np.float32)).n_levels == 1
    assert build_octree(np.zeros((5, 3, 7), dtype=np.float32)).n_levels == 4


def test_octree_parents_equal_child_means_bit_exact():
    rng = np.random.default_rng(5)
    for shape in [(8, 8, 8), (5, 3, 7), (4, 16, 2), (9, 9, 9)]:
        f = rng.random(shape).astype(np.float32) * 10
        t = build_octree(f)
        for lvl in range(1, t.n_levels):
            want = oracle_coarsen(t.levels[lvl - 1])
            assert np.array_equal(t.levels[lvl], want), f"{shape} level {lvl}"


def test_octree_mass_conserved_pow2():
    rng = np.random.default_rng(8)
    for shape in [(16, 16, 16), (8, 32, 16), (4, 4, 64)]:
        f = rng.random(shape).astype(np.float32)
        t = build_octree(f)
        m0 = float(t.levels[0].mean())
        for lvl in range(1, t.n_levels):
            m = float(t.levels[lvl].mean())
            assert m == pytest.approx(m0, rel=1e-5)


def test_octree_sample_identity_at_centers():
    rng = np.random.default_rng(2)
    f = rng.random((4, 4, 4)).astype(np.float32)
    t = build_octree(f)
    for z in range(4):
        for y in range(4):
            for x in range(4):
                v = t.sample(np.array([x + 0.5, y + 0.5, z + 0.5]), 0)
                assert v == pytest.approx(float(f[z, y, x]), abs=1e-6)
    # midway between two cell centers on x: average of the two
    v = t.sample(np.array([1.0, 0.5, 0.5]), 0)
    assert v == pytest.approx(0.5 * (float(f[0, 0, 0]) + float(f[0, 0, 1])), abs=1e-6)


def test_octree_rejects_empty():
    with pytest.raises(ValueError):
        build_octree(np.zeros((0, 4, 4), dtype=np.float32))


# --- representative lines -------------------------------------------------------

def oracle_representative(starts, ends, origin, size, n_bins):
    """Direct simulation with brute-force bin-center snapping."""
    starts = [np.asarray(s, dtype=np.float64) for s in starts]
    ends = [np.asarray(e, dtype=np.float64) for e in ends]
    sum_a = np.zeros(3)
    sum_b = np.zeros(3)
    for i, (a, b) in enumerate(zip(starts, ends)):
        if i > 0 and np.dot(b - a, sum_b - sum_a) < 0:
            a, b = b, a
        sum_a = sum_a + a
        sum_b = sum_b + b
    avg_a = (sum_a / len(starts) - origin) / size
    avg_b = (sum_b / len(starts) - origin) / size

    axes = [(0, 0.0, 1, 2), (0, 1.0, 1, 2), (1, 0.0, 0, 2),
            (1, 1.0, 0, 2), (2, 0.0, 0, 1), (2, 1.0, 0, 1)]

    def snap(p):
        best = None
        for face, (ax, side, ua, va) in enumerate(axes):
            for bv in range(n_bins):
                for bu in range(n_bins):
                    c = np.empty(3)
                    c[ax] = side
                    c[ua] = (bu + 0.5) / n_bins
                    c[va] = (bv + 0.5) / n_bins
                    d = float(np.sum((c - p) ** 2))
                    if best is None or d < best[0] - 1e-15:
                        best = (d, c)
        return best[1]

    return snap(avg_a) * size + origin, snap(avg_b) * size + origin


def test_representative_single_segment_identity():
    # endpoints already on bin centers of a unit voxel at the origin
    n = 4
    a = np.array([0.0, (1 + 0.5) / n, (2 + 0.5) / n])
    b = np.array([1.0, (3 + 0.5) / n, (0 + 0.5) / n])
    qa, qb, w = representative_line([a], [b], origin=(0, 0, 0), size=1.0, n_bins=n)
    assert np.allclose(qa, a) and np.allclose(qb, b)
    assert w == pytest.approx(float(np.linalg.norm(b - a)))


def test_representative_flips_opposed_segment():
    a1, b1 = np.array([0.0, 0.4, 0.4]), np.array([1.0, 0.4, 0.4])
    # same geometry stored in reverse
    qa, qb, _ = representative_line([a1, b1], [b1, a1], (0, 0, 0), 1.0, 8)
    d = qb - qa
    assert d[0] > 0  # representative keeps the seed orientation
    assert abs(d[1]) < 1e-9 and abs(d[2]) < 1e-9


def test_representative_global_reversal_gives_same_line():
    rng = np.random.default_rng(11)
    for _ in range(10):
        starts = rng.random((5, 3))
        ends = rng.random((5, 3))
        f = representative_line(starts, ends, (0, 0, 0), 1.0, 16)
        r = representative_line(ends, starts, (0, 0, 0), 1.0, 16)
        assert f is not None and r is not None
        same = np.allclose(f[0], r[0]) and np.allclose(f[1], r[1])
        swapped = np.allclose(f[0], r[1]) and np.allclose(f[1], r[0])
        assert same or swapped


def test_representative_matches_simulation_oracle():
    rng = np.random.default_rng(21)
    for trial in range(8):
        m = rng.integers(1, 6)
        starts = rng.random((m, 3)) * 2.0 + 4.0
        ends = rng.random((m, 3)) * 2.0 + 4.0
        got = representative_line(starts, ends, (4, 4, 4), 2.0, 8)
        want = oracle_representative(starts, ends, np.array([4.0, 4.0, 4.0]), 2.0, 8)
        assert np.allclose(got[0], want[0], atol=1e-12), f"trial {trial}"
        assert np.allclose(got[1], want[1], atol=1e-12), f"trial {trial}"


def test_representative_empty_returns_none():
    assert representative_line(np.zeros((0, 3)), np.zeros((0, 3)), (0, 0, 0), 1.0, 4) is None


# --- rep line field --------------------------------------------------------------

def straight_line_model(slope=0.0, n_bins=32):
    y = lambda x: 1.0 + slope * x
    pts = np.array([[-0.2, y(-0.2), 1.0], [4.2, y(4.2), 1.0]])
    cs = CurveSet.from_curves([Curve(points=pts, attrs=np.zeros(2))])
    spec = GridSpec(dims=(4, 2, 2), bins_per_axis=n_bins)
    return build_voxel_model(cs, spec), spec


def test_rep_lines_straight_line_collinear():
    m, spec = straight_line_model(slope=0.0)
    assert m.segment_count == 4
    tree = build_octree(compute_density_level0(m))
    reps = build_rep_lines(m, tree)
    lvl = reps.levels[1]
    assert lvl.valid.sum() == 2
    bin_w = 2.0 / spec.bins_per_axis  # level-1 voxel is 2 units wide
    for lin in np.nonzero(lvl.valid)[0]:
        for p in (lvl.a[lin], lvl.b[lin]):
            assert abs(p[1] - 1.0) <= bin_w
            assert abs(p[2] - 1.0) <= bin_w


def test_rep_lines_weight_propagates():
    m, _ = straight_line_model(slope=0.05)
    tree = build_octree(compute_density_level0(m))
    reps = build_rep_lines(m, tree)
    total = float(np.linalg.norm(m.seg_b.astype(np.float64) - m.seg_a.astype(np.float64),
                                 axis=1).sum())
    w1 = float(reps.levels[1].weight.sum())
    assert w1 == pytest.approx(total, rel=1e-6)
    top = reps.levels[-1]
    assert float(top.weight[top.valid].sum()) == pytest.approx(total, rel=1e-6)


def test_rep_lines_adjacency_snap_joins_endpoints():
    m, _ = straight_line_model(slope=0.05)
    tree = build_octree(compute_density_level0(m))
    loose = build_rep_lines(m, tree, adjacency=False)
    snapped = build_rep_lines(m, tree, adjacency=True)
    l1, s1 = loose.levels[1], snapped.levels[1]
    assert list(np.nonzero(l1.valid)[0]) == [0, 1]
    # without the snap the two reps meet the shared face x=2 in different bins
    assert not np.array_equal(l1.b[0], l1.a[1])
    # with it they share the exact endpoint
    assert np.array_equal(s1.b[0], s1.a[1])
    assert s1.a[1][0] == pytest.approx(2.0)


def test_rep_lines_empty_regions_have_no_reps():
    m, _ = straight_line_model()
    tree = build_octree(compute_density_level0(m))
    reps = build_rep_lines(m, tree)
    lvl = reps.levels[1]
    occupied = {0, 1}
    for lin in range(lvl.valid.size):
        assert bool(lvl.valid[lin]) == (lin in occupied)
