"""Rigid poses, posed 2D slices and regular voxel grids.

Conventions
-----------
* A :class:`Pose` maps slice-frame millimetres to world millimetres.  Pixel
  ``(u, v)`` (column, row) of a slice sits at slice-frame point
  ``(u * spacing_u, v * spacing_v, 0)``, i.e. pixel *centres* are addressed and
  pixel ``(0, 0)`` lands on the pose translation.
* Pixel size lives in the slice spacing, never in the pose, so poses stay rigid.
* A :class:`GridSpec` origin is the world position of the centre of voxel
  ``(0, 0, 0)``; arrays are indexed ``[ix, iy, iz]``.

World coordinates are evaluated with explicit element-wise arithmetic rather
than matrix products so that vectorised and scalar code paths agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

ORTHO_TOL = 1e-6
# below this deviation a rotation is kept verbatim instead of re-orthonormalised
_EXACT_TOL = 1e-14


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def polar_rotation(m):
    """Nearest proper rotation to ``m`` (orthogonal polar factor)."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def check_rotation(r, what="rotation"):
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise ValidationError(f"{what} must be a finite 3x3 matrix")
    dev = np.abs(r.T @ r - np.eye(3)).max()
    if dev > ORTHO_TOL:
        raise ValidationError(f"{what} is not orthonormal (max deviation {dev:.3g})")
    if np.linalg.det(r) < 0:
        raise ValidationError(f"{what} has determinant -1 (reflection)")
    if dev > _EXACT_TOL:
        r = polar_rotation(r)
    return r


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid 4x4 homogeneous transform, slice frame -> world (mm)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape == (16,):
            m = m.reshape(4, 4)
        if m.shape != (4, 4):
            raise ValidationError("pose matrix must be 4x4 (or 16 values row-major)")
        if not np.all(np.isfinite(m)):
            raise ValidationError("pose matrix contains non-finite values")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValidationError("pose bottom row must be exactly (0, 0, 0, 1)")
        m = m.copy()
        m[:3, :3] = check_rotation(m[:3, :3], "pose rotation")
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def identity(cls):
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, rotation, translation):
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @property
    def rotation(self):
        return self.matrix[:3, :3]

    @property
    def translation(self):
        return self.matrix[:3, 3]

    @property
    def normal(self):
        """Unit normal of the slice plane in world coordinates."""
        return self.matrix[:3, 2]

    def to_list(self):
        return [float(x) for x in self.matrix.ravel()]

    def __eq__(self, other):
        return isinstance(other, Pose) and np.array_equal(self.matrix, other.matrix)

    def __repr__(self):
        return f"Pose({self.matrix.tolist()!r})"


def rotation_x(deg):
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(deg):
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(deg):
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_about(axis, deg):
    """Rodrigues rotation about an arbitrary axis."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    th = np.radians(deg)
    return np.eye(3) + np.sin(th) * kx + (1.0 - np.cos(th)) * (kx @ kx)


def translation(x, y, z):
    return Pose.from_rt(np.eye(3), (x, y, z))


def compose_pose(a: Pose, b: Pose) -> Pose:
    """``a . b``: apply ``b`` first, then ``a``."""
    return Pose(a.matrix @ b.matrix)


def invert_pose(p: Pose) -> Pose:
    r = p.rotation.T
    return Pose.from_rt(r, -r @ p.translation)


@dataclass(frozen=True)
class SliceGeometry:
    """Where an ``height x width`` pixel raster lives in world space."""

    height: int
    width: int
    spacing_u: float
    spacing_v: float
    pose: Pose

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise ValidationError("slice must have at least one pixel in each direction")
        if not (self.spacing_u > 0 and self.spacing_v > 0):
            raise ValidationError("slice spacing must be strictly positive")
        if not isinstance(self.pose, Pose):
            object.__setattr__(self, "pose", Pose(self.pose))

    @property
    def shape(self):
        return (int(self.height), int(self.width))

    @property
    def geometry(self):
        return self

    def corners_world(self):
        """World positions of the four corner pixel centres."""
        h, w = self.shape
        u = np.array([0.0, w - 1.0, 0.0, w - 1.0])
        v = np.array([0.0, 0.0, h - 1.0, h - 1.0])
        return pixels_to_world(self, u, v)

    def pixel_world(self):
        """World coordinates of every pixel centre, shape (H, W, 3)."""
        h, w = self.shape
        v, u = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
        return pixels_to_world(self, u, v)


@dataclass(frozen=True, eq=False)
class PosedSlice:
    """A 2D intensity image (values in [-1, 1]) placed in world space."""

    pixels: np.ndarray
    spacing_u: float
    spacing_v: float
    pose: Pose
    validity: np.ndarray | None = None
    labels: np.ndarray | None = None
    _geometry: SliceGeometry = field(init=False, repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2:
            raise ValidationError("slice pixels must be a 2D array")
        if not np.all(np.isfinite(px)):
            raise ValidationError("slice pixels must be finite")
        if px.size and (px.min() < -1.0 or px.max() > 1.0):
            raise ValidationError("slice intensities must lie in [-1, 1]")
        geom = SliceGeometry(px.shape[0], px.shape[1], float(self.spacing_u),
                             float(self.spacing_v), self.pose)
        object.__setattr__(self, "pose", geom.pose)
        object.__setattr__(self, "_geometry", geom)
        object.__setattr__(self, "pixels", _frozen(px))
        val = np.ones(px.shape, bool) if self.validity is None else np.asarray(self.validity, bool)
        if val.shape != px.shape:
            raise ValidationError("validity mask shape differs from pixel shape")
        object.__setattr__(self, "validity", _frozen(val, bool))
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != px.shape:
                raise ValidationError("label shape differs from pixel shape")
            if lab.size and (lab.min() < 0 or lab.max() > 6):
                raise ValidationError("slice labels must be class ids in 0..6")
            object.__setattr__(self, "labels", _frozen(lab, np.uint8))

    @property
    def geometry(self) -> SliceGeometry:
        return self._geometry

    @property
    def shape(self):
        return self._geometry.shape


def pixels_to_world(geom, u, v):
    """Vectorised slice -> world map; returns ``(..., 3)``."""
    m = geom.pose.matrix
    a = np.asarray(u, dtype=float) * geom.spacing_u
    b = np.asarray(v, dtype=float) * geom.spacing_v
    return np.stack([(m[i, 0] * a + m[i, 1] * b) + m[i, 3] for i in range(3)], axis=-1)


def slice_to_world(s, u, v):
    """World position (mm) of the (possibly fractional) pixel ``(u, v)``."""
    return pixels_to_world(s.geometry, u, v)


def world_to_slice(s, p):
    """Inverse of :func:`slice_to_world`.

    Returns ``(u, v, d)`` where ``d`` is the signed distance along the plane
    normal, so ``slice_to_world(s, u, v) + d * normal == p``.
    """
    g = s.geometry
    m = g.pose.matrix
    q = np.asarray(p, dtype=float) - m[:3, 3]
    local = q @ m[:3, :3]
    return local[..., 0] / g.spacing_u, local[..., 1] / g.spacing_v, local[..., 2]


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned regular voxel lattice."""

    dims: tuple
    spacing: tuple
    origin: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        sp = tuple(float(s) for s in np.broadcast_to(np.asarray(self.spacing, float), (3,)))
        org = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or len(org) != 3:
            raise ValidationError("grid dims and origin need three components")
        if min(dims) < 1:
            raise ValidationError(f"grid dims must be >= 1, got {dims}")
        if not all(s > 0 for s in sp):
            raise ValidationError(f"grid spacing must be > 0, got {sp}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", sp)
        object.__setattr__(self, "origin", org)

    @classmethod
    def centered(cls, dims, spacing, center=(0.0, 0.0, 0.0)):
        dims = tuple(int(d) for d in dims)
        sp = np.broadcast_to(np.asarray(spacing, float), (3,))
        origin = np.asarray(center, float) - (np.asarray(dims) - 1) / 2.0 * sp
        return cls(dims, tuple(sp), tuple(origin))

    @property
    def shape(self):
        return self.dims

    @property
    def size(self):
        return int(np.prod(self.dims))

    def center(self):
        return np.asarray(self.origin) + (np.asarray(self.dims) - 1) / 2.0 * np.asarray(self.spacing)

    def voxel_centers(self):
        """World coordinates of all voxel centres, shape ``dims + (3,)``."""
        axes = [self.origin[i] + np.arange(self.dims[i]) * self.spacing[i] for i in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def world_to_index(self, p):
        """Continuous voxel index of world points ``(..., 3)``."""
        p = np.asarray(p, dtype=float)
        return np.stack([(p[..., i] - self.origin[i]) / self.spacing[i] for i in range(3)], axis=-1)

    def to_dict(self):
        return {"dims": list(self.dims), "spacing": list(self.spacing), "origin": list(self.origin)}


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``x -> scale * rotation @ x + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValidationError("similarity scale must be > 0")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", _frozen(check_rotation(self.rotation)))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls):
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points):
        pts = np.asarray(points, dtype=float)
        return self.scale * pts @ self.rotation.T + self.translation

    def inverse(self):
        rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, rt, -(rt @ self.translation) / self.scale)

    def is_identity(self):
        return (self.scale == 1.0 and np.array_equal(self.rotation, np.eye(3))
                and not self.translation.any())

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m
