"""Synthetic left-atrium phantom and a simulated rotational ICE sweep.

Anatomy: an ellipsoidal LA, an ellipsoidal appendage lobe and four capped
tubes for the pulmonary veins, each anchored on the LA surface.  Labels are
painted in class order 1..6 (later classes overwrite).  The CT-like intensity
volume combines per-structure levels with a smooth low-frequency background
and a small partial-volume blur.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .geometry import GridSpec, Pose, PosedSlice, SliceGeometry, rotation_about
from .mesh import ellipsoid_mesh, tube_mesh
from .sparse_volume import DenseVolume, LabelVolume, project_labels, sample_volume

PV_NAMES = ("LIPV", "LSPV", "RIPV", "RSPV")


@dataclass(frozen=True)
class VeinParams:
    direction: tuple
    radius: float = 4.0
    length: float = 12.0


def _default_veins():
    return (
        VeinParams((-1.0, -0.35, -0.55)),
        VeinParams((-1.0, -0.35, 0.55)),
        VeinParams((1.0, -0.35, -0.55)),
        VeinParams((1.0, -0.35, 0.55)),
    )


@dataclass(frozen=True)
class PhantomParams:
    la_radii: tuple = (15.0, 12.0, 11.0)
    la_center: tuple = (0.0, 0.0, 0.0)
    laa_offset: tuple = (-10.0, 11.0, 5.0)
    laa_radii: tuple | None = (7.0, 5.0, 4.5)
    veins: tuple = field(default_factory=_default_veins)  # LIPV, LSPV, RIPV, RSPV; None disables
    # background, LA, LAA, LIPV, LSPV, RIPV, RSPV
    levels: tuple = (-0.5, 0.6, 0.45, 0.3, 0.35, 0.25, 0.2)
    background_amplitude: float = 0.08
    partial_volume_sigma: float = 2.0  # voxels
    speckle_variance: float = 0.01
    noise: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.la_radii) <= 0:
            raise ValidationError("LA radii must be > 0")
        if self.laa_radii is not None and min(self.laa_radii) <= 0:
            raise ValidationError("LAA radii must be > 0 (use None to disable)")
        if len(self.veins) != 4:
            raise ValidationError("exactly four vein entries (or None) are required")
        veins = []
        for v in self.veins:
            if v is not None and not isinstance(v, VeinParams):
                v = VeinParams(**v)
            if v is not None and (v.radius <= 0 or v.length <= 0):
                raise ValidationError("vein radius and length must be > 0")
            veins.append(v)
        object.__setattr__(self, "veins", tuple(veins))
        if len(self.levels) != 7 or len(set(self.levels)) != 7:
            raise ValidationError("need 7 distinct intensity levels")
        if min(self.levels) < -1 or max(self.levels) > 1:
            raise ValidationError("intensity levels must lie in [-1, 1]")
        if self.speckle_variance < 0:
            raise ValidationError("speckle variance must be >= 0")

    @classmethod
    def la_only(cls, **kw):
        return cls(laa_radii=None, veins=(None,) * 4, **kw)

    def to_dict(self):
        d = asdict(self)
        d["veins"] = [None if v is None else asdict(v) for v in self.veins]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "veins" in d:
            d["veins"] = tuple(None if v is None else VeinParams(**v) for v in d["veins"])
        for k in ("la_radii", "la_center", "laa_offset", "laa_radii", "levels"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Phantom:
    params: PhantomParams
    ct: DenseVolume
    labels: LabelVolume
    meshes: list


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def vein_segment(params: PhantomParams, vein: VeinParams):
    """Start/end of a vein axis: from just inside the LA wall outwards along its direction."""
    d = _unit(vein.direction)
    a = np.asarray(params.la_radii, float)
    # ray/ellipsoid intersection from the LA centre
    t = 1.0 / np.sqrt(((d / a) ** 2).sum())
    anchor = np.asarray(params.la_center, float) + t * d
    start = anchor - 0.5 * vein.radius * d
    return start, anchor + vein.length * d


def _segment_distance(pts, a, b):
    ab = b - a
    t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(pts - (a + t[..., None] * ab), axis=-1)


def structure_masks(params: PhantomParams, points):
    """Analytic membership of ``points (..., 3)`` for each enabled class id."""
    c = np.asarray(params.la_center, float)
    out = {1: (((points - c) / np.asarray(params.la_radii)) ** 2).sum(-1) <= 1.0}
    if params.laa_radii is not None:
        lc = c + np.asarray(params.laa_offset, float)
        out[2] = (((points - lc) / np.asarray(params.laa_radii)) ** 2).sum(-1) <= 1.0
    for k, v in enumerate(params.veins):
        if v is None:
            continue
        a, b = vein_segment(params, v)
        out[3 + k] = _segment_distance(points, a, b) <= v.radius
    return out


def phantom_meshes(params: PhantomParams, subdivisions=4):
    c = np.asarray(params.la_center, float)
    meshes = [ellipsoid_mesh(params.la_radii, c, subdivisions, class_id=1)]
    if params.laa_radii is not None:
        meshes.append(ellipsoid_mesh(params.laa_radii, c + np.asarray(params.laa_offset), 3, class_id=2))
    for k, v in enumerate(params.veins):
        if v is not None:
            a, b = vein_segment(params, v)
            meshes.append(tube_mesh(a, b, v.radius, class_id=3 + k))
    return meshes


def _check_fits(params, meshes, grid):
    lo = np.asarray(grid.origin)
    hi = lo + (np.asarray(grid.dims) - 1) * np.asarray(grid.spacing)
    for m in meshes:
        if np.any(m.vertices.min(0) < lo) or np.any(m.vertices.max(0) > hi):
            raise ValidationError(f"structure class {m.class_id} extends outside the grid")


def make_phantom(params: PhantomParams, grid: GridSpec) -> Phantom:
    """CT-like volume, label volume and analytic meshes for ``params`` on ``grid``."""
    meshes = phantom_meshes(params)
    _check_fits(params, meshes, grid)
    pts = grid.voxel_centers()
    labels = np.zeros(grid.dims, np.uint8)
    for cls, m in sorted(structure_masks(params, pts).items()):
        labels[m] = cls
    levels = np.asarray(params.levels, float)
    ct = levels[labels]
    rng = np.random.default_rng(params.seed)
    if params.background_amplitude:
        ext = (np.asarray(grid.dims) * np.asarray(grid.spacing)).max()
        bg = np.zeros(grid.dims)
        for _ in range(3):
            k = rng.normal(size=3)
            k *= 2 * np.pi / ext / np.linalg.norm(k)
            bg += np.cos(pts @ k + rng.uniform(0, 2 * np.pi))
        ct = ct + params.background_amplitude / 3.0 * bg
    if params.partial_volume_sigma > 0:
        ct = ndimage.gaussian_filter(ct, params.partial_volume_sigma, mode="nearest")
    ct = np.clip(ct, -1.0, 1.0)
    return Phantom(params, DenseVolume(grid, ct), LabelVolume(grid, labels), meshes)


@dataclass(frozen=True)
class FanGeometry:
    """Sector-shaped field of view; the apex sits ``apex_offset`` mm above the image top row."""

    apex_offset: float = 16.0
    angular_width: float = 110.0
    depth: float = 90.0

    def mask(self, height, width, spacing_u, spacing_v):
        v, u = np.meshgrid(np.arange(height, dtype=float), np.arange(width, dtype=float), indexing="ij")
        du = (u - (width - 1) / 2.0) * spacing_u
        dv = v * spacing_v + self.apex_offset
        r = np.hypot(du, dv)
        ang = np.degrees(np.arctan2(np.abs(du), dv))
        return (r <= self.depth) & (ang <= self.angular_width / 2.0)


@dataclass(frozen=True)
class SweepParams:
    n_slices: int = 40
    height: int = 64
    width: int = 64
    spacing: float = 1.0
    fan: FanGeometry = FanGeometry()
    axis: tuple = (0.0, 0.0, 1.0)
    mode: str = "rotational"  # or "linear"
    linear_step: float = 1.0
    interp: str = "nearest"
    jitter_start: bool = True

    def __post_init__(self):
        if int(self.n_slices) < 1:
            raise ValidationError("n_slices must be >= 1")
        if self.mode not in ("rotational", "linear"):
            raise ValidationError(f"unknown sweep mode {self.mode!r}")
        if not isinstance(self.fan, FanGeometry):
            object.__setattr__(self, "fan", FanGeometry(**self.fan))


def _perp(w):
    helper = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e = helper - (helper @ w) * w
    return e / np.linalg.norm(e)


def sweep_poses(center, sweep: SweepParams, start_angle=0.0):
    """Slice geometries of a half-turn rotation about ``sweep.axis`` (or a parallel linear sweep).

    Every rotational plane contains the axis; the image v-direction points
    along ``-axis`` so the fan apex sits on the axis above the image.
    """
    w = _unit(sweep.axis)
    e0 = _perp(w)
    ev = -w
    h, wd, sp = sweep.height, sweep.width, sweep.spacing
    center = np.asarray(center, float)
    geoms = []
    for k in range(sweep.n_slices):
        if sweep.mode == "rotational":
            theta = start_angle + 180.0 * k / sweep.n_slices
            eu = rotation_about(w, theta) @ e0
            offset = np.zeros(3)
        else:
            theta = start_angle
            eu = rotation_about(w, theta) @ e0
            offset = (k - (sweep.n_slices - 1) / 2.0) * sweep.linear_step * np.cross(eu, ev)
        n = np.cross(eu, ev)
        r = np.column_stack([eu, ev, n])
        # image centre pixel on the sweep centre
        t = center + offset - ((wd - 1) / 2.0 * sp) * eu - ((h - 1) / 2.0 * sp) * ev
        geoms.append(SliceGeometry(h, wd, sp, sp, Pose.from_rt(r, t)))
    return geoms


def simulate_ice_sweep(phantom: Phantom, sweep: SweepParams = SweepParams(), seed=None):
    """Posed, fan-masked, optionally speckled slices with ground-truth labels.

    Each slice draws noise from its own substream ``(seed, index)``.
    """
    p = phantom.params
    seed = p.seed if seed is None else seed
    if sweep.jitter_start and sweep.mode == "rotational":
        start = float(np.random.default_rng([seed, 0xA11]).uniform(0.0, 180.0 / sweep.n_slices))
    else:
        start = 0.0
    center = phantom.ct.grid.center()
    fan = sweep.fan.mask(sweep.height, sweep.width, sweep.spacing, sweep.spacing)
    out = []
    for k, g in enumerate(sweep_poses(center, sweep, start)):
        img, oob = sample_volume(phantom.ct, g, sweep.interp)
        valid = fan & ~oob
        img = np.where(valid, img, 0.0)
        if p.noise and p.speckle_variance > 0:
            rng = np.random.default_rng([seed, k])
            eta = rng.normal(0.0, np.sqrt(p.speckle_variance), size=img.shape)
            img = np.clip(img * (1.0 + eta), -1.0, 1.0)
        lab = np.where(valid, project_labels(phantom.labels, g).classes, 0)
        out.append(PosedSlice(img, g.spacing_u, g.spacing_v, g.pose, valid, lab))
    return out


def default_grid(dims=64, spacing=1.0):
    return GridSpec.centered((dims,) * 3, spacing)
