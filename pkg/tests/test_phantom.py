import numpy as np
import pytest

from icecontour.errors import ValidationError
from icecontour.geometry import GridSpec
from icecontour.mesh import voxelize_mesh
from icecontour.metrics import dice
from icecontour.phantom import (
    FanGeometry, PhantomParams, SweepParams, default_grid, make_phantom, simulate_ice_sweep,
    sweep_poses,
)
from icecontour.sparse_volume import sample_grid, sample_volume, splat_slices


@pytest.fixture(scope="module")
def la_only():
    return make_phantom(PhantomParams.la_only(noise=False), default_grid())


@pytest.fixture(scope="module")
def full():
    return make_phantom(PhantomParams(seed=3, noise=False), default_grid())


def test_la_only_volume_close_to_ellipsoid(la_only):
    a, b, c = la_only.params.la_radii
    n = int((la_only.labels.classes == 1).sum())
    exact = 4.0 / 3.0 * np.pi * a * b * c
    assert abs(n - exact) / exact < 0.05


def test_la_only_has_two_classes(la_only):
    assert set(np.unique(la_only.labels.classes)) == {0, 1}


def test_la_mesh_agrees_with_painted_labels(la_only):
    la_mesh = [m for m in la_only.meshes if m.class_id == 1][0]
    vox = voxelize_mesh(la_mesh, la_only.labels.grid)
    assert dice(vox.classes, la_only.labels.classes, 1) >= 0.98


def test_full_phantom_has_every_class(full):
    assert set(np.unique(full.labels.classes)) == set(range(7))
    assert full.ct.values.min() >= -1 and full.ct.values.max() <= 1


def test_structure_outside_grid_rejected():
    with pytest.raises(ValidationError):
        make_phantom(PhantomParams(), GridSpec.centered((20, 20, 20), 1.0))


def test_single_slice_equals_plane_sample(full):
    sweep = SweepParams(n_slices=1, jitter_start=False)
    s = simulate_ice_sweep(full, sweep)[0]
    expect, oob = sample_volume(full.ct, s.geometry, sweep.interp)
    fan = sweep.fan.mask(sweep.height, sweep.width, sweep.spacing, sweep.spacing)
    valid = fan & ~oob
    assert np.array_equal(s.validity, valid)
    assert np.array_equal(s.pixels[valid], expect[valid])
    # the plane is axis aligned: its normal is a world axis
    assert np.isclose(np.abs(s.pose.normal).max(), 1.0, atol=1e-12)


def test_36_slices_are_5_degrees_apart():
    geoms = sweep_poses(np.zeros(3), SweepParams(n_slices=36))
    us = np.array([g.pose.rotation[:, 0] for g in geoms])
    ang = np.degrees(np.arccos(np.clip((us[:-1] * us[1:]).sum(1), -1, 1)))
    np.testing.assert_allclose(ang, 5.0, atol=1e-9)


def test_all_planes_contain_the_axis():
    geoms = sweep_poses(np.array([1.0, 2.0, 3.0]), SweepParams(n_slices=7), start_angle=2.0)
    for g in geoms:
        assert abs(g.pose.normal @ np.array([0, 0, 1.0])) < 1e-12


def test_trilinear_round_trip_cross_talk_bound(full):
    slices = simulate_ice_sweep(full, SweepParams(interp="trilinear"))
    sv = splat_slices(slices, full.ct.grid, "trilinear")
    back, _ = sample_volume(sv, slices[0].geometry, "trilinear")
    occ, _ = sample_grid(sv.occupancy, sv.grid,
                         sv.grid.world_to_index(slices[0].geometry.pixel_world()), "trilinear")
    m = slices[0].validity & (occ > 0)
    assert np.abs(back[m] - slices[0].pixels[m]).max() < 0.05


def test_speckle_preserves_mean():
    ph = make_phantom(PhantomParams(seed=5), default_grid())
    sweep = SweepParams(n_slices=4, height=100, width=100, spacing=0.6)
    noisy = simulate_ice_sweep(ph, sweep)
    clean = simulate_ice_sweep(make_phantom(PhantomParams(seed=5, noise=False), default_grid()), sweep)
    for a, b in zip(noisy, clean):
        m = b.validity
        ratio = a.pixels[m].mean() / b.pixels[m].mean()
        assert 0.98 <= ratio <= 1.02


def test_sweep_is_deterministic(full):
    p = make_phantom(PhantomParams(seed=9), default_grid())
    a = simulate_ice_sweep(p, SweepParams(n_slices=3))
    b = simulate_ice_sweep(p, SweepParams(n_slices=3))
    for x, y in zip(a, b):
        assert np.array_equal(x.pixels, y.pixels) and x.pose == y.pose


def test_labels_zero_outside_fan(full):
    s = simulate_ice_sweep(full, SweepParams(n_slices=2))[1]
    assert not s.labels[~s.validity].any()


def test_fan_mask_shape():
    m = FanGeometry(apex_offset=10, angular_width=60, depth=40).mask(50, 50, 1.0, 1.0)
    assert m[0, 25] and not m[0, 0] and not m[49, 25]


def test_params_round_trip_dict():
    p = PhantomParams(seed=4)
    assert PhantomParams.from_dict(p.to_dict()) == p
