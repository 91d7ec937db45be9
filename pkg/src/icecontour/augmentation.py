"""Random similarity perturbations applied jointly to an image volume and its labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ValidationError
from .geometry import SimilarityTransform
from .sparse_volume import LabelVolume, SparseVolume, sample_grid

# sample positions this close to a lattice point are snapped onto it
SNAP_TOL = 1e-9


def _pair(x, what):
    lo, hi = (float(v) for v in x)
    if lo > hi:
        raise ValidationError(f"{what}: lo {lo} > hi {hi}")
    return (lo, hi)


@dataclass(frozen=True)
class PerturbationRanges:
    scale: tuple = (0.9, 1.1)
    rotation_deg: tuple = ((-10.0, 10.0),) * 3
    translation_mm: tuple = ((-5.0, 5.0),) * 3
    seed: int = 0

    def __post_init__(self):
        sc = _pair(self.scale, "scale")
        if sc[0] <= 0:
            raise ValidationError("scale range must be > 0")
        rot = self._per_axis(self.rotation_deg, "rotation_deg")
        tr = self._per_axis(self.translation_mm, "translation_mm")
        object.__setattr__(self, "scale", sc)
        object.__setattr__(self, "rotation_deg", rot)
        object.__setattr__(self, "translation_mm", tr)
        object.__setattr__(self, "seed", int(self.seed))

    @staticmethod
    def _per_axis(r, what):
        r = list(r)
        if len(r) == 2 and np.isscalar(r[0]):
            r = [r] * 3
        if len(r) != 3:
            raise ValidationError(f"{what} needs one [lo, hi] pair or three of them")
        return tuple(_pair(x, f"{what}[{i}]") for i, x in enumerate(r))

    @classmethod
    def identity(cls, seed=0):
        return cls((1.0, 1.0), ((0.0, 0.0),) * 3, ((0.0, 0.0),) * 3, seed)

    def to_dict(self):
        return {"scale": list(self.scale), "rotation_deg": [list(r) for r in self.rotation_deg],
                "translation_mm": [list(t) for t in self.translation_mm], "seed": self.seed}


def sample_perturbation(ranges: PerturbationRanges, rng=None) -> SimilarityTransform:
    """Uniform draws in the fixed order scale, rot x/y/z, trans x/y/z.

    Rotation angles are extrinsic about world x, then y, then z.
    """
    if rng is None:
        rng = np.random.default_rng(ranges.seed)
    scale = rng.uniform(*ranges.scale)
    angles = [rng.uniform(*r) for r in ranges.rotation_deg]
    trans = [rng.uniform(*t) for t in ranges.translation_mm]
    if not any(angles):
        rot = np.eye(3)
    else:
        rot = Rotation.from_euler("xyz", angles, degrees=True).as_matrix()
    return SimilarityTransform(scale, rot, np.array(trans, dtype=float))


def _pullback_indices(grid, t: SimilarityTransform):
    """Continuous source indices for every output voxel under ``t`` about the grid centre."""
    c = grid.center()
    q = grid.voxel_centers().reshape(-1, 3)
    p = ((q - c - t.translation) @ t.rotation) / t.scale + c
    idx = grid.world_to_index(p)
    near = np.round(idx)
    idx = np.where(np.abs(idx - near) < SNAP_TOL, near, idx)
    return idx.reshape(tuple(grid.dims) + (3,))


def apply_transform(vol: SparseVolume, lab: LabelVolume, t: SimilarityTransform):
    """Resample ``vol`` (trilinear) and ``lab`` (nearest) under ``t`` on their shared grid.

    The output at world point ``q`` is read from ``t^-1(q)``, with rotation and
    scaling about the grid centre.  Samples outside the grid are 0 / class 0.
    """
    if vol.grid != lab.grid:
        raise ValidationError("volume and labels must share a grid")
    if t.is_identity():
        return (SparseVolume(vol.grid, vol.values.copy(), vol.occupancy.copy(), dict(vol.meta)),
                LabelVolume(lab.grid, lab.classes.copy()))
    g = vol.grid
    idx = _pullback_indices(g, t)
    occ, _ = sample_grid(vol.occupancy, g, idx, "trilinear")
    val, _ = sample_grid(vol.values, g, idx, "trilinear")
    occ = np.maximum(occ, 0.0)
    val = np.where(occ > 0, val, 0.0)
    cls, _ = sample_grid(lab.classes, g, idx, "nearest")
    return SparseVolume(g, val, occ, dict(vol.meta)), LabelVolume(g, cls.astype(np.uint8))


def transform_labels(lab: LabelVolume, t: SimilarityTransform) -> LabelVolume:
    """Nearest-neighbour pull-back of a label volume alone."""
    if t.is_identity():
        return LabelVolume(lab.grid, lab.classes.copy())
    cls, _ = sample_grid(lab.classes, lab.grid, _pullback_indices(lab.grid, t), "nearest")
    return LabelVolume(lab.grid, cls.astype(np.uint8))


def transform_about_center(t: SimilarityTransform, center) -> SimilarityTransform:
    """World-frame equivalent of ``t`` applied about ``center`` (for moving meshes consistently)."""
    c = np.asarray(center, float)
    return SimilarityTransform(t.scale, t.rotation, c + t.translation - t.scale * t.rotation @ c)
