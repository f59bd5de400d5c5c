import numpy as np
import pytest

from streamseg.metrics import (
    VoxelMask,
    dice_overlap_overreach,
    grid_covering,
    metrics_report,
    voxelize,
)


def mask(occupied, dims=(10, 10, 10), size=1.0):
    return VoxelMask(dims=dims, voxel_size_mm=size, origin=np.zeros(3),
                     occupied=set(occupied))


def test_voxelize_single_point():
    m = voxelize([np.array([[2.4, 3.9, 0.1]])], 1.0, (10, 10, 10), np.zeros(3))
    assert m.occupied == {(2, 3, 0)}


def test_voxelize_axis_segment_covers_every_voxel():
    s = np.array([[0.5, 0.5, 0.5], [10.5, 0.5, 0.5]])
    m = voxelize([s], 1.0, (12, 2, 2), np.zeros(3))
    assert m.occupied == {(i, 0, 0) for i in range(11)}


def test_voxelize_densify_step_fills_diagonal():
    # a 45-degree diagonal through unit voxels touches one voxel per unit
    # of axis travel plus corners; the half-voxel step must not skip any
    s = np.array([[0.1, 0.1, 0.0], [4.9, 4.9, 0.0]])
    m = voxelize([s], 1.0, (6, 6, 1), np.zeros(3))
    assert {(i, i, 0) for i in range(5)} <= m.occupied


def test_voxelize_union_homomorphism():
    rng = np.random.default_rng(0)
    dims, origin = (30, 30, 30), np.full(3, -15.0)
    bundles = [[rng.uniform(-10, 10, size=(5, 3)) for _ in range(3)]
               for _ in range(2)]
    separate = [voxelize(b, 1.0, dims, origin) for b in bundles]
    joint = voxelize(bundles[0] + bundles[1], 1.0, dims, origin)
    assert joint.occupied == separate[0].occupied | separate[1].occupied


def test_voxelize_out_of_grid_raises():
    with pytest.raises(ValueError, match="outside"):
        voxelize([np.array([[11.0, 0.0, 0.0]])], 1.0, (10, 10, 10), np.zeros(3))
    with pytest.raises(ValueError, match="outside"):
        voxelize([np.array([[-0.5, 0.0, 0.0]])], 1.0, (10, 10, 10), np.zeros(3))


def test_grid_covering_contains_points():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-40, 60, size=(200, 3))
    dims, origin = grid_covering(pts, 2.0)
    idx = np.floor((pts - origin) / 2.0)
    assert np.all(idx >= 0) and np.all(idx < np.asarray(dims))
    # padding leaves at least one voxel of margin
    assert np.all(idx >= 1)


def test_metric_hand_examples():
    assert dice_overlap_overreach(mask([]), mask([])) == (1.0, 1.0, 0.0)

    p = mask([(0, 0, 0), (1, 0, 0)])
    g = mask([(0, 0, 0)])
    d, ov, orr = dice_overlap_overreach(p, g)
    assert d == pytest.approx(2 / 3)
    assert ov == pytest.approx(1.0)
    assert orr == pytest.approx(1.0)

    disjoint = dice_overlap_overreach(mask([(5, 5, 5)]), mask([(0, 0, 0)]))
    assert disjoint == (0.0, 0.0, 1.0)


def test_metric_identity_perfect_prediction():
    rng = np.random.default_rng(2)
    vox = {tuple(v) for v in rng.integers(0, 10, size=(50, 3))}
    d, ov, orr = dice_overlap_overreach(mask(vox), mask(vox))
    assert (d, ov, orr) == (1.0, 1.0, 0.0)


def test_dice_relation():
    # dice = 2*overlap*|G| / (|P| + |G|) for any pair on the same grid
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = {tuple(v) for v in rng.integers(0, 6, size=(rng.integers(1, 30), 3))}
        g = {tuple(v) for v in rng.integers(0, 6, size=(rng.integers(1, 30), 3))}
        d, ov, orr = dice_overlap_overreach(mask(p), mask(g))
        assert d == pytest.approx(2 * ov * len(g) / (len(p) + len(g)))
        assert len(p & g) == round(ov * len(g))
        assert len(p - g) == round(orr * len(g))


def test_metric_symmetries():
    p = mask([(0, 0, 0), (1, 0, 0), (2, 0, 0)])
    g = mask([(1, 0, 0), (2, 0, 0), (3, 0, 0), (4, 0, 0)])
    d1, ov1, orr1 = dice_overlap_overreach(p, g)
    d2, ov2, orr2 = dice_overlap_overreach(g, p)
    assert d1 == pytest.approx(d2)      # dice is symmetric
    assert ov1 != ov2                    # overlap and overreach are not
    assert orr1 != orr2


def test_metric_errors():
    with pytest.raises(ValueError, match="undefined reference"):
        dice_overlap_overreach(mask([(0, 0, 0)]), mask([]))
    other = VoxelMask(dims=(5, 5, 5), voxel_size_mm=2.0,
                      origin=np.zeros(3), occupied=set())
    with pytest.raises(ValueError, match="grids differ"):
        dice_overlap_overreach(mask([]), other)


def test_metrics_report_format():
    rows = [("cst", 0.9, 0.95, 0.1), ("af", 0.7, 0.75, 0.3)]
    report = metrics_report(rows)
    lines = report.splitlines()
    assert lines[0] == "class\tdice\toverlap\toverreach"
    assert lines[1] == "cst\t0.9000\t0.9500\t0.1000"
    assert lines[2] == "af\t0.7000\t0.7500\t0.3000"
    # hand-computed mean and population std of the dice column
    mean, std = 0.8, 0.1
    assert lines[3].startswith("mean±std\t")
    assert lines[3].split("\t")[1] == f"{mean:.4f}±{std:.4f}"
    assert report.endswith("\n")


def test_metrics_report_empty():
    assert metrics_report([]) == "class\tdice\toverlap\toverreach\n"
