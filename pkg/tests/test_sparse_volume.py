import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icecontour.errors import ValidationError
from icecontour.geometry import GridSpec, Pose, PosedSlice, SliceGeometry, rotation_x
from icecontour.mesh import icosphere, voxelize_mesh
from icecontour.sparse_volume import (
    DenseVolume, LabelVolume, SparseVolume, plan_grid, project_labels, sample_volume,
    splat_labels, splat_slices,
)
from oracles import brute_splat, random_splat_case


def flat_slice(h, w, spacing=1.0, pose=None, pixels=None, labels=None):
    px = np.zeros((h, w)) if pixels is None else pixels
    return PosedSlice(px, spacing, spacing, pose or Pose.identity(), labels=labels)


def test_plan_grid_single_slice():
    g = plan_grid([flat_slice(10, 10)], 1.0)
    assert g.dims[0] >= 10 and g.dims[1] >= 10 and g.dims[2] >= 1
    np.testing.assert_allclose(g.origin, [0, 0, 0])
    assert g.dims == (10, 10, 1)


def test_plan_grid_margin():
    g = plan_grid([flat_slice(10, 10)], 1.0, margin=2.0)
    np.testing.assert_allclose(g.origin, [-2, -2, -2])
    assert g.dims == (14, 14, 5)


def test_plan_grid_contains_all_corners():
    a = flat_slice(10, 10)
    b = flat_slice(6, 8, pose=Pose.from_rt(rotation_x(90), (1.0, 2.0, -1.0)))
    g = plan_grid([a, b], 0.5)
    lo = np.asarray(g.origin)
    hi = lo + (np.asarray(g.dims) - 1) * np.asarray(g.spacing)
    for s in (a, b):
        for c in s.geometry.corners_world():
            assert np.all(c >= lo - 1e-9) and np.all(c <= hi + 1e-9)
    # and no slack beyond one voxel
    corners = np.concatenate([s.geometry.corners_world() for s in (a, b)])
    assert np.all(hi - corners.max(0) < 0.5)


def test_plan_grid_needs_slices():
    with pytest.raises(ValidationError):
        plan_grid([], 1.0)


def test_single_pixel_nearest_at_voxel_centre():
    g = GridSpec((4, 4, 4), 1.0, (0, 0, 0))
    s = flat_slice(1, 1, pose=Pose.from_rt(np.eye(3), (1, 2, 3)), pixels=np.array([[0.7]]))
    sv = splat_slices([s], g, "nearest")
    assert sv.values[1, 2, 3] == 0.7 and sv.occupancy[1, 2, 3] == 1.0
    assert np.count_nonzero(sv.values) == 1 and np.count_nonzero(sv.occupancy) == 1


def test_single_pixel_between_voxels_trilinear():
    g = GridSpec((4, 4, 4), 1.0, (0, 0, 0))
    s = flat_slice(1, 1, pose=Pose.from_rt(np.eye(3), (1.5, 2, 3)), pixels=np.array([[-0.3]]))
    sv = splat_slices([s], g, "trilinear")
    assert sv.values[1, 2, 3] == sv.values[2, 2, 3] == -0.3
    assert sv.occupancy[1, 2, 3] == sv.occupancy[2, 2, 3] == 0.5
    assert np.count_nonzero(sv.occupancy) == 2


@pytest.mark.parametrize("mode", ["nearest", "trilinear"])
@pytest.mark.parametrize("seed", range(10))
def test_splat_matches_brute_force(mode, seed):
    grid, slices = random_splat_case(np.random.default_rng(seed))
    sv = splat_slices(slices, grid, mode)
    vals, occ = brute_splat(slices, grid, mode)
    assert np.array_equal(sv.occupancy, occ)
    assert np.array_equal(sv.values, vals)


def test_sparse_invariants_enforced():
    g = GridSpec((2, 2, 2), 1.0, (0, 0, 0))
    with pytest.raises(ValidationError):
        SparseVolume(g, np.ones((2, 2, 2)), np.zeros((2, 2, 2)), {})
    with pytest.raises(ValidationError):
        SparseVolume(g, np.zeros((2, 2, 2)), -np.ones((2, 2, 2)), {})


def test_slice_outside_grid_is_counted():
    g = GridSpec((3, 3, 3), 1.0, (0, 0, 0))
    s = flat_slice(2, 2, pose=Pose.from_rt(np.eye(3), (50, 50, 50)))
    sv = splat_slices([s], g)
    assert sv.meta["slices_outside"] == 1 and not sv.occupancy.any()


def test_sample_constant_volume():
    g = GridSpec.centered((6, 6, 6), 1.0)
    vol = DenseVolume(g, np.full(g.dims, 0.25))
    geom = SliceGeometry(3, 3, 0.7, 0.7, Pose.from_rt(rotation_x(33), g.center() - 0.5))
    vals, oob = sample_volume(vol, geom, "trilinear")
    assert not oob.any()
    np.testing.assert_allclose(vals, 0.25, atol=1e-15)


def test_axis_aligned_round_trip_nearest():
    rng = np.random.default_rng(4)
    g = GridSpec((8, 8, 3), 1.0, (0, 0, 0))
    s = flat_slice(8, 8, pose=Pose.from_rt(np.eye(3), (0, 0, 1)), pixels=rng.uniform(-1, 1, (8, 8)))
    sv = splat_slices([s], g, "nearest")
    back, oob = sample_volume(sv, s.geometry, "nearest")
    assert not oob.any()
    assert np.array_equal(back, s.pixels)


@settings(max_examples=50, deadline=None)
@given(st.tuples(*[st.floats(-0.5, 6.5)] * 3))
def test_trilinear_reproduces_linear_ramp(p):
    g = GridSpec((8, 8, 8), (1.0, 0.5, 2.0), (0.0, 0.0, 0.0))
    x = g.voxel_centers()
    ramp = 0.02 * x[..., 0] - 0.03 * x[..., 1] + 0.01 * x[..., 2]
    vol = DenseVolume(g, ramp)
    world = np.asarray(g.origin) + np.minimum(np.asarray(p), 7.0) * np.asarray(g.spacing)
    world = np.clip(world, np.asarray(g.origin), np.asarray(g.origin) + 7 * np.asarray(g.spacing))
    geom = SliceGeometry(1, 1, 1.0, 1.0, Pose.from_rt(np.eye(3), world))
    vals, oob = sample_volume(vol, geom, "trilinear")
    expect = 0.02 * world[0] - 0.03 * world[1] + 0.01 * world[2]
    assert not oob[0, 0]
    assert abs(vals[0, 0] - expect) < 1e-12


def test_out_of_bounds_samples_are_flagged_zero():
    g = GridSpec((4, 4, 4), 1.0, (0, 0, 0))
    vol = DenseVolume(g, np.ones(g.dims))
    geom = SliceGeometry(1, 3, 2.0, 1.0, Pose.from_rt(np.eye(3), (2, 1, 1)))
    vals, oob = sample_volume(vol, geom, "trilinear")
    assert list(oob[0]) == [False, True, True]
    assert list(vals[0]) == [1.0, 0.0, 0.0]


def test_project_uniform_la_volume():
    g = GridSpec((5, 5, 5), 1.0, (0, 0, 0))
    lab = LabelVolume(g, np.ones(g.dims, np.uint8))
    geom = SliceGeometry(8, 8, 1.0, 1.0, Pose.from_rt(np.eye(3), (0, 0, 2)))
    m = project_labels(lab, geom).classes
    assert np.all(m[:5, :5] == 1)
    assert np.all(m[5:, :] == 0) and np.all(m[:, 5:] == 0)


def test_project_sphere_gives_disk_area():
    g = GridSpec.centered((25, 25, 25), 1.0)
    lab = voxelize_mesh(icosphere(5, 8.0), g)
    geom = SliceGeometry(25, 25, 1.0, 1.0, Pose.from_rt(np.eye(3), (-12, -12, 0)))
    area = int((project_labels(lab, geom).classes == 1).sum())
    assert abs(area - np.pi * 64) / (np.pi * 64) < 0.10


def test_project_then_revoxelize_axis_aligned():
    rng = np.random.default_rng(5)
    g = GridSpec((6, 7, 5), 1.0, (0, 0, 0))
    lab = LabelVolume(g, rng.integers(0, 7, g.dims).astype(np.uint8))
    geom = SliceGeometry(7, 6, 1.0, 1.0, Pose.from_rt(np.eye(3), (0, 0, 3)))
    mask = project_labels(lab, geom)
    s = PosedSlice(np.zeros(mask.classes.shape), 1.0, 1.0, geom.pose, labels=mask.classes)
    back = splat_labels([s], g)
    assert np.array_equal(mask.classes.T, lab.classes[:, :, 3])
    assert np.array_equal(back.classes[:, :, 3], lab.classes[:, :, 3])


def test_label_splat_majority_and_tie():
    g = GridSpec((1, 1, 1), 1.0, (0, 0, 0))
    mk = lambda c: flat_slice(1, 1, labels=np.array([[c]]))
    assert splat_labels([mk(2), mk(3), mk(3)], g).classes[0, 0, 0] == 3
    assert splat_labels([mk(4), mk(2)], g).classes[0, 0, 0] == 2


def test_label_volume_rejects_bad_class():
    g = GridSpec((1, 1, 1), 1.0, (0, 0, 0))
    with pytest.raises(ValidationError):
        LabelVolume(g, np.full((1, 1, 1), 9, np.uint8))
