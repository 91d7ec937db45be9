"""Assemble a sparse 3D volume from posed slices and project volumes back onto slices.

Splatting accumulates, per voxel, the total deposited weight (occupancy) and a
weighted mean of the deposited intensities.  The mean is accumulated relative
to the first intensity that reached the voxel::

    value = ref + sum(w_i * (I_i - ref)) / sum(w_i)

which is algebraically the plain weighted mean but returns ``ref`` exactly when
every contribution carries the same intensity.  Contributions are processed in
slice order, then row-major pixel order, then corner order
(``dx``, ``dy``, ``dz`` each in 0, 1) for the trilinear kernel; zero weights are
skipped.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .geometry import GridSpec, SliceGeometry

log = logging.getLogger(__name__)

N_CLASSES = 7
CLASS_NAMES = ("background", "LA", "LAA", "LIPV", "LSPV", "RIPV", "RSPV")
STRUCTURES = CLASS_NAMES[1:]

_CORNERS = tuple(itertools.product((0, 1), repeat=3))


def _check_grid_array(grid, arr, what):
    if tuple(arr.shape) != tuple(grid.dims):
        raise ValidationError(f"{what} shape {arr.shape} does not match grid dims {grid.dims}")


@dataclass(frozen=True, eq=False)
class SparseVolume:
    grid: GridSpec
    values: np.ndarray
    occupancy: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        o = np.asarray(self.occupancy, dtype=float)
        _check_grid_array(self.grid, v, "values")
        _check_grid_array(self.grid, o, "occupancy")
        if not np.all(np.isfinite(v)):
            raise ValidationError("sparse volume values must be finite")
        if o.min(initial=0.0) < 0:
            raise ValidationError("occupancy must be non-negative")
        if np.any(v[o == 0] != 0):
            raise ValidationError("values at unoccupied voxels must be exactly 0")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "occupancy", o)

    @property
    def observed(self):
        return self.occupancy > 0


@dataclass(frozen=True, eq=False)
class DenseVolume:
    """A fully populated intensity grid (CT-like phantom, completed volume)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        _check_grid_array(self.grid, v, "values")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    grid: GridSpec
    classes: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.classes)
        _check_grid_array(self.grid, c, "classes")
        if c.size and (c.min() < 0 or c.max() >= N_CLASSES):
            raise ValidationError("class ids must lie in 0..6")
        object.__setattr__(self, "classes", c.astype(np.uint8))


@dataclass(frozen=True, eq=False)
class SliceLabelMask:
    classes: np.ndarray
    geometry: SliceGeometry

    def __post_init__(self):
        c = np.asarray(self.classes)
        if c.shape != self.geometry.shape:
            raise ValidationError("mask shape does not match slice geometry")
        if c.size and (c.min() < 0 or c.max() >= N_CLASSES):
            raise ValidationError("class ids must lie in 0..6")
        object.__setattr__(self, "classes", c.astype(np.uint8))


def plan_grid(slices, spacing, margin=0.0) -> GridSpec:
    """Smallest axis-aligned grid (at ``spacing``) covering every slice corner plus ``margin``."""
    if not slices:
        raise ValidationError("plan_grid needs at least one slice")
    if not spacing > 0:
        raise ValidationError("grid spacing must be > 0")
    if margin < 0:
        raise ValidationError("margin must be >= 0")
    corners = np.concatenate([s.geometry.corners_world() for s in slices])
    lo = corners.min(axis=0) - margin
    hi = corners.max(axis=0) + margin
    # tolerate round-off so an exact multiple of spacing does not grow by one voxel
    n = np.floor((hi - lo) / spacing + 1e-9).astype(int) + 1
    return GridSpec(tuple(n), (spacing,) * 3, tuple(lo))


def _kernel(idx_cont, dims, mode):
    """Voxel flat indices and weights for points ``(P, 3)``; rows are (point, corner) ordered."""
    dims = np.asarray(dims)
    if mode == "nearest":
        ijk = np.floor(idx_cont + 0.5).astype(np.int64)
        w = np.ones(len(idx_cont))
        ok = np.all((ijk >= 0) & (ijk < dims), axis=1)
        flat = np.ravel_multi_index(tuple(np.where(ok[:, None], ijk, 0).T), tuple(dims))
        return flat[ok], w[ok], np.flatnonzero(ok)
    if mode != "trilinear":
        raise ValidationError(f"unknown interpolation mode {mode!r}")
    base = np.floor(idx_cont)
    frac = idx_cont - base
    base = base.astype(np.int64)
    flats, weights, owners = [], [], []
    npts = len(idx_cont)
    for dx, dy, dz in _CORNERS:
        d = np.array([dx, dy, dz])
        ijk = base + d
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
        wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
        w = wx * wy * wz
        ok = np.all((ijk >= 0) & (ijk < dims), axis=1) & (w > 0)
        flats.append(np.ravel_multi_index(tuple(np.where(ok[:, None], ijk, 0).T), tuple(dims)))
        weights.append(w)
        owners.append(np.where(ok, np.arange(npts), -1))
    # interleave so that all corners of point p precede point p + 1
    flat = np.stack(flats, axis=1).ravel()
    w = np.stack(weights, axis=1).ravel()
    owner = np.stack(owners, axis=1).ravel()
    keep = owner >= 0
    return flat[keep], w[keep], owner[keep]


def _weighted_accumulate(flat, w, intensity, size):
    occ = np.bincount(flat, weights=w, minlength=size)
    _, first = np.unique(flat, return_index=True)
    ref = np.zeros(size)
    ref[flat[first]] = intensity[first]
    num = np.bincount(flat, weights=w * (intensity - ref[flat]), minlength=size)
    vals = np.zeros(size)
    hit = occ > 0
    vals[hit] = np.clip(ref[hit] + num[hit] / occ[hit], -1.0, 1.0)
    return vals, occ


def splat_slices(slices, grid: GridSpec, mode="nearest") -> SparseVolume:
    """Deposit every valid slice pixel into ``grid``.

    ``mode='nearest'`` gives the whole unit weight to the closest voxel,
    ``mode='trilinear'`` spreads it over the 8 enclosing voxels.  Slices that
    miss the grid entirely are counted in ``meta['slices_outside']``.
    """
    pts, vals = [], []
    outside = 0
    dropped = 0
    for s in slices:
        m = s.validity
        world = s.geometry.pixel_world()[m]
        idx = grid.world_to_index(world)
        pts.append(idx)
        vals.append(s.pixels[m])
    if pts:
        idx = np.concatenate(pts)
        inten = np.concatenate(vals)
    else:
        idx, inten = np.zeros((0, 3)), np.zeros(0)
    flat, w, owner = _kernel(idx, grid.dims, mode)
    values, occ = _weighted_accumulate(flat, w, inten[owner], grid.size)

    # per-slice bookkeeping for the outside-grid warning
    start = 0
    hit_points = np.zeros(len(idx), bool)
    hit_points[owner] = True
    for p in pts:
        n = len(p)
        got = hit_points[start:start + n]
        if n and not got.any():
            outside += 1
        dropped += int(n - got.sum())
        start += n
    if outside:
        log.warning("%d slice(s) fall entirely outside the grid", outside)
    meta = {"mode": mode, "slices": len(slices), "slices_outside": outside,
            "pixels_deposited": int(hit_points.sum()), "pixels_outside": dropped}
    return SparseVolume(grid, values.reshape(grid.dims), occ.reshape(grid.dims), meta)


def splat_labels(slices, grid: GridSpec) -> LabelVolume:
    """Nearest-voxel majority vote of slice labels; ties go to the lowest class id.

    Voxels no valid labelled pixel reaches stay 0.
    """
    counts = np.zeros((N_CLASSES, grid.size), np.int64)
    for s in slices:
        if s.labels is None:
            continue
        m = s.validity
        idx = grid.world_to_index(s.geometry.pixel_world()[m])
        flat, _, owner = _kernel(idx, grid.dims, "nearest")
        cls = s.labels[m][owner]
        np.add.at(counts, (cls, flat), 1)
    out = np.argmax(counts, axis=0).astype(np.uint8)
    return LabelVolume(grid, out.reshape(grid.dims))


def sample_grid(array, grid: GridSpec, idx_cont, interp="trilinear"):
    """Sample ``array`` at continuous voxel indices ``(..., 3)``.

    Returns ``(samples, out_of_bounds)``.  A point is in bounds when each
    coordinate lies within half a voxel of the lattice; out-of-bounds samples
    are 0.  Trilinear corners are clamped to the lattice.
    """
    a = np.asarray(array)
    shape = idx_cont.shape[:-1]
    c = idx_cont.reshape(-1, 3)
    dims = np.asarray(grid.dims)
    if interp == "nearest":
        ijk = np.floor(c + 0.5).astype(np.int64)
        inb = np.all((ijk >= 0) & (ijk < dims), axis=1)
        ijk = np.where(inb[:, None], ijk, 0)
        out = np.where(inb, a[ijk[:, 0], ijk[:, 1], ijk[:, 2]], 0)
        return out.reshape(shape), ~inb.reshape(shape)
    if interp != "trilinear":
        raise ValidationError(f"unknown interpolation mode {interp!r}")
    inb = np.all((c >= -0.5) & (c <= dims - 0.5), axis=1)
    cc = np.clip(c, 0, dims - 1)
    i0 = np.clip(np.floor(cc).astype(np.int64), 0, np.maximum(dims - 2, 0))
    f = cc - i0
    i1 = np.minimum(i0 + 1, dims - 1)
    af = a.astype(float)
    out = np.zeros(len(c))
    for dx, dy, dz in _CORNERS:
        ix = i1[:, 0] if dx else i0[:, 0]
        iy = i1[:, 1] if dy else i0[:, 1]
        iz = i1[:, 2] if dz else i0[:, 2]
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        wy = f[:, 1] if dy else 1.0 - f[:, 1]
        wz = f[:, 2] if dz else 1.0 - f[:, 2]
        out += wx * wy * wz * af[ix, iy, iz]
    out = np.where(inb, out, 0.0)
    return out.reshape(shape), ~inb.reshape(shape)


def sample_volume(vol, s, interp="trilinear"):
    """Resample a volume (anything with ``grid`` and ``values``/``classes``) on a slice plane.

    Returns ``(H x W samples, H x W out-of-bounds flags)``.
    """
    arr = vol.values if hasattr(vol, "values") else vol.classes
    idx = vol.grid.world_to_index(s.geometry.pixel_world())
    return sample_grid(arr, vol.grid, idx, interp)


def project_labels(lab: LabelVolume, s) -> SliceLabelMask:
    """Nearest-voxel class of each pixel centre; pixels outside the grid get class 0."""
    idx = lab.grid.world_to_index(s.geometry.pixel_world())
    cls, _ = sample_grid(lab.classes, lab.grid, idx, "nearest")
    return SliceLabelMask(cls.astype(np.uint8), s.geometry)


def occupancy_stats(sv: SparseVolume):
    occ = sv.occupancy
    n_obs = int(np.count_nonzero(occ))
    return {
        "voxels": int(occ.size),
        "observed": n_obs,
        "observed_fraction": n_obs / occ.size,
        "total_weight": float(occ.sum()),
        "max_weight": float(occ.max(initial=0.0)),
    }
