"""Triangle meshes: similarity Procrustes, closest-mesh pairing and voxelization."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInputError, ValidationError, WatertightError
from .geometry import GridSpec, SimilarityTransform
from .sparse_volume import LabelVolume

# fixed sub-voxel offset of every +x ray, in units of grid spacing; keeps rays off
# mesh edges and vertices that sit exactly on voxel-centre lines
RAY_JITTER = (1.0e-7 * np.sqrt(2.0), 1.0e-7 * np.sqrt(3.0))


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    class_id: int = 1

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 3:
            raise ValidationError("mesh needs at least 3 vertices of shape (N, 3)")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValidationError("mesh faces must have shape (M, 3)")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValidationError("face index out of range")
        if len(f) and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValidationError("mesh has a degenerate face (repeated vertex index)")
        if not 1 <= int(self.class_id) <= 6:
            raise ValidationError("mesh class_id must be in 1..6")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "class_id", int(self.class_id))

    def transformed(self, t: SimilarityTransform) -> "Mesh":
        return Mesh(t.apply(self.vertices), self.faces, self.class_id)

    def volume(self):
        """Signed enclosed volume (positive for outward-oriented faces)."""
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def procrustes_align(src, dst, with_scale=True):
    """Least-squares similarity (or rigid) transform taking ``src`` onto ``dst``.

    Closed form from the SVD of the centred cross-covariance; when the optimal
    orthogonal factor would be a reflection the smallest singular direction is
    flipped, so the returned rotation always has determinant +1.

    Returns ``(SimilarityTransform, rms_residual)``.
    """
    x = np.asarray(src, dtype=float)
    y = np.asarray(dst, dtype=float)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ValidationError("procrustes needs two (N, 3) arrays of equal shape")
    n = len(x)
    if n < 3:
        raise DegenerateInputError(f"procrustes needs >= 3 points, got {n}")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    sx = np.linalg.svd(xc, compute_uv=False)
    if sx[1] <= 1e-12 * max(sx[0], 1e-300):
        raise DegenerateInputError("source points are collinear or coincident")
    cov = yc.T @ xc / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[-1] = -1.0
    r = (u * sign) @ vt
    var_x = (xc ** 2).sum() / n
    s = float((d * sign).sum() / var_x) if with_scale else 1.0
    if s <= 0:
        raise DegenerateInputError("optimal scale is not positive")
    t = my - s * r @ mx
    resid = s * x @ r.T + t - y
    rms = float(np.sqrt((resid ** 2).sum(axis=1).mean()))
    return SimilarityTransform(s, r, t), rms


def _normalized(v):
    c = v - v.mean(axis=0)
    rad = np.sqrt((c ** 2).sum(axis=1).mean())
    return c / rad, rad


def chamfer_distance(a, b):
    """Symmetric mean nearest-vertex distance between two point sets."""
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return 0.5 * (da.mean() + db.mean())


def mesh_distance(a: Mesh, b: Mesh) -> float:
    """Shape distance in mm.

    Meshes with equal vertex counts are treated as corresponded and compared by
    the rms residual of a scaled Procrustes fit of ``a`` onto ``b``.  Otherwise
    both vertex clouds are centred and scaled to unit rms radius, their chamfer
    distance taken, and the result rescaled by the mean of the two radii.
    """
    if len(a.vertices) == 0 or len(b.vertices) == 0:
        raise ValidationError("mesh_distance on an empty mesh")
    if len(a.vertices) == len(b.vertices):
        return procrustes_align(a.vertices, b.vertices, with_scale=True)[1]
    na, ra = _normalized(a.vertices)
    nb, rb = _normalized(b.vertices)
    return float(chamfer_distance(na, nb) * 0.5 * (ra + rb))


def pair_mesh(query: Mesh, library):
    """Index and distance of the library mesh closest to ``query`` (ties -> lowest index)."""
    if not library:
        raise ValidationError("pair_mesh needs a non-empty library")
    dists = np.array([mesh_distance(query, m) for m in library])
    i = int(np.argmin(dists))
    return i, float(dists[i])


def check_watertight(mesh: Mesh):
    counts = Counter()
    for f in mesh.faces:
        a, b, c = (int(x) for x in f)
        for e in ((a, b), (b, c), (c, a)):
            counts[(min(e), max(e))] += 1
    for e, n in sorted(counts.items()):
        if n != 2:
            raise WatertightError(e, n)


def _ray_hits(mesh: Mesh, grid: GridSpec):
    """All (ray_y, ray_z, x_index_coord) crossings of +x rays through voxel-centre lines.

    Rays are indexed by voxel ``(iy, iz)``; crossing positions are returned in
    continuous x-index units.
    """
    ny, nz = grid.dims[1], grid.dims[2]
    idx = grid.world_to_index(mesh.vertices)
    tri = idx[mesh.faces]  # (M, 3, 3)
    ray_y, ray_z, hit_x = [], [], []
    jy, jz = RAY_JITTER
    for t in tri:
        y, z = t[:, 1], t[:, 2]
        iy = np.arange(max(int(np.ceil(y.min() - jy)), 0), min(int(np.floor(y.max() - jy)), ny - 1) + 1)
        iz = np.arange(max(int(np.ceil(z.min() - jz)), 0), min(int(np.floor(z.max() - jz)), nz - 1) + 1)
        if not len(iy) or not len(iz):
            continue
        py, pz = np.meshgrid(iy + jy, iz + jz, indexing="ij")
        py, pz = py.ravel(), pz.ravel()
        (y0, y1, y2), (z0, z1, z2) = y, z
        det = (y1 - y0) * (z2 - z0) - (y2 - y0) * (z1 - z0)
        if det == 0:
            continue
        l1 = ((py - y0) * (z2 - z0) - (y2 - y0) * (pz - z0)) / det
        l2 = ((y1 - y0) * (pz - z0) - (py - y0) * (z1 - z0)) / det
        l0 = 1.0 - l1 - l2
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not inside.any():
            continue
        # written relative to vertex 0 so faces of constant x give that x exactly
        x = t[0, 0] + l1 * (t[1, 0] - t[0, 0]) + l2 * (t[2, 0] - t[0, 0])
        ray_y.append(np.floor(py[inside]).astype(np.int64))
        ray_z.append(np.floor(pz[inside]).astype(np.int64))
        hit_x.append(x[inside])
    if not hit_x:
        e = np.zeros(0, np.int64)
        return e, e, np.zeros(0)
    return np.concatenate(ray_y), np.concatenate(ray_z), np.concatenate(hit_x)


def ray_crossing_counts(mesh: Mesh, grid: GridSpec):
    """Number of surface crossings along every full +x grid ray, shape ``(ny, nz)``."""
    ry, rz, _ = _ray_hits(mesh, grid)
    counts = np.zeros(grid.dims[1:], np.int64)
    np.add.at(counts, (ry, rz), 1)
    return counts


def inside_mask(mesh: Mesh, grid: GridSpec):
    """Boolean grid of voxel centres inside the (watertight) surface, by +x ray parity."""
    check_watertight(mesh)
    nx = grid.dims[0]
    ry, rz, hx = _ray_hits(mesh, grid)
    # voxel centre i is inside when an odd number of crossings lie strictly beyond it;
    # a crossing at x stops counting from voxel ceil(x) on
    first_after = np.clip(np.ceil(hx).astype(np.int64), 0, nx)
    toggles = np.zeros((nx + 1,) + tuple(grid.dims[1:]), np.int64)
    np.add.at(toggles, (first_after, ry, rz), 1)
    before = np.cumsum(toggles, axis=0)[:nx]
    total = np.zeros(grid.dims[1:], np.int64)
    np.add.at(total, (ry, rz), 1)
    return ((total[None] - before) % 2) == 1


def voxelize_mesh(mesh: Mesh, grid: GridSpec) -> LabelVolume:
    """Paint ``mesh.class_id`` into every voxel whose centre lies inside the mesh."""
    return voxelize_meshes([mesh], grid)


def voxelize_meshes(meshes, grid: GridSpec) -> LabelVolume:
    """Compose several meshes; higher class ids overwrite lower ones."""
    out = np.zeros(grid.dims, np.uint8)
    for m in sorted(meshes, key=lambda m: m.class_id):
        out[inside_mask(m, grid)] = m.class_id
    return LabelVolume(grid, out)


# -- mesh constructors -------------------------------------------------------

def icosphere(subdivisions=3, radius=1.0, center=(0.0, 0.0, 0.0), class_id=1):
    """Geodesic sphere obtained by subdividing an icosahedron."""
    phi = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = verts[i] + verts[j]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, float)
    return Mesh(v, np.array(faces), class_id)


def ellipsoid_mesh(radii, center=(0.0, 0.0, 0.0), subdivisions=3, class_id=1):
    unit = icosphere(subdivisions)
    return Mesh(unit.vertices * np.asarray(radii, float) + np.asarray(center, float), unit.faces, class_id)


def box_mesh(lo, hi, class_id=1):
    """Closed axis-aligned box, outward-oriented."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array([[hi[0] if i & 1 else lo[0], hi[1] if i & 2 else lo[1], hi[2] if i & 4 else lo[2]]
                  for i in range(8)])
    f = [(0, 2, 1), (1, 2, 3), (4, 5, 6), (5, 7, 6), (0, 1, 4), (1, 5, 4),
         (2, 6, 3), (3, 6, 7), (0, 4, 2), (2, 4, 6), (1, 3, 5), (3, 7, 5)]
    return Mesh(v, np.array(f), class_id)


def tube_mesh(start, end, radius, n_around=24, n_rings=6, class_id=3):
    """Capped cylinder between ``start`` and ``end``."""
    start, end = np.asarray(start, float), np.asarray(end, float)
    axis = end - start
    length = np.linalg.norm(axis)
    if length <= 0 or radius <= 0:
        raise ValidationError("tube needs positive length and radius")
    w = axis / length
    helper = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(w, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(w, e1)
    ang = 2 * np.pi * np.arange(n_around) / n_around
    ring = np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2
    verts = []
    for k in range(n_rings + 1):
        verts.append(start + axis * (k / n_rings) + radius * ring)
    verts = list(np.concatenate(verts))
    verts.append(start)
    verts.append(end)
    c0, c1 = len(verts) - 2, len(verts) - 1
    faces = []
    for k in range(n_rings):
        for j in range(n_around):
            a = k * n_around + j
            b = k * n_around + (j + 1) % n_around
            faces += [(a, b, a + n_around), (b, b + n_around, a + n_around)]
    top = n_rings * n_around
    for j in range(n_around):
        jn = (j + 1) % n_around
        faces.append((c0, jn, j))
        faces.append((c1, top + j, top + jn))
    return Mesh(np.array(verts), np.array(faces), class_id)
