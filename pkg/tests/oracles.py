"""Slow, independent reference implementations used as test oracles.

These deliberately avoid the vectorised code paths of the package: plain
Python loops, explicit neighbour scans, all-pairs distances, and a different
closed form (quaternion) for the optimal rotation.
"""

import math

import numpy as np


def brute_splat(slices, grid, mode):
    """Per-pixel scalar splatter; returns (values, occupancy)."""
    nx, ny, nz = grid.dims
    ox, oy, oz = grid.origin
    sx, sy, sz = grid.spacing
    occ = np.zeros(grid.dims)
    num = np.zeros(grid.dims)
    ref = {}
    for s in slices:
        m = s.pose.matrix
        h, w = s.pixels.shape
        for v in range(h):
            for u in range(w):
                if not s.validity[v, u]:
                    continue
                inten = float(s.pixels[v, u])
                a = float(u) * s.spacing_u
                b = float(v) * s.spacing_v
                x = (m[0, 0] * a + m[0, 1] * b) + m[0, 3]
                y = (m[1, 0] * a + m[1, 1] * b) + m[1, 3]
                z = (m[2, 0] * a + m[2, 1] * b) + m[2, 3]
                cx, cy, cz = (x - ox) / sx, (y - oy) / sy, (z - oz) / sz
                if mode == "nearest":
                    deposits = [((math.floor(cx + 0.5), math.floor(cy + 0.5), math.floor(cz + 0.5)), 1.0)]
                else:
                    bx, by, bz = math.floor(cx), math.floor(cy), math.floor(cz)
                    fx, fy, fz = cx - bx, cy - by, cz - bz
                    deposits = []
                    for dx in (0, 1):
                        for dy in (0, 1):
                            for dz in (0, 1):
                                wx = fx if dx else 1.0 - fx
                                wy = fy if dy else 1.0 - fy
                                wz = fz if dz else 1.0 - fz
                                deposits.append(((bx + dx, by + dy, bz + dz), wx * wy * wz))
                for (i, j, k), wt in deposits:
                    if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz) or wt <= 0:
                        continue
                    if (i, j, k) not in ref:
                        ref[(i, j, k)] = inten
                    occ[i, j, k] += wt
                    num[i, j, k] += wt * (inten - ref[(i, j, k)])
    vals = np.zeros(grid.dims)
    for key, r in ref.items():
        if occ[key] > 0:
            vals[key] = min(1.0, max(-1.0, r + num[key] / occ[key]))
    return vals, occ


def count_dice(p, g):
    inter = sp = sg = 0
    for a, b in zip(np.asarray(p).ravel().tolist(), np.asarray(g).ravel().tolist()):
        sp += a
        sg += b
        inter += a and b
    if sp + sg == 0:
        return 1.0
    return 2.0 * inter / (sp + sg)


def brute_surface_points(mask, spacing):
    """Surface voxel coordinates (mm) by explicit 6-neighbour scan; outside counts as background."""
    m = np.asarray(mask, bool)
    pts = []
    for idx in zip(*np.nonzero(m)):
        on_surface = False
        for ax in range(m.ndim):
            for step in (-1, 1):
                nb = list(idx)
                nb[ax] += step
                if nb[ax] < 0 or nb[ax] >= m.shape[ax] or not m[tuple(nb)]:
                    on_surface = True
        if on_surface:
            pts.append([i * s for i, s in zip(idx, spacing)])
    return np.array(pts, dtype=float).reshape(-1, m.ndim)


def brute_assd(p, g, spacing):
    sp = brute_surface_points(p, spacing)
    sg = brute_surface_points(g, spacing)
    if len(sp) == 0 or len(sg) == 0:
        return None
    d = np.sqrt(((sp[:, None, :] - sg[None, :, :]) ** 2).sum(-1))
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def horn_similarity_rms(src, dst):
    """Optimal similarity residual via Horn's unit-quaternion method."""
    x = np.asarray(src, float)
    y = np.asarray(dst, float)
    xc = x - x.mean(0)
    yc = y - y.mean(0)
    s = xc.T @ yc
    sxx, sxy, sxz = s[0]
    syx, syy, syz = s[1]
    szx, szy, szz = s[2]
    n = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    w, v = np.linalg.eigh(n)
    q0, qx, qy, qz = v[:, -1]
    r = np.array([
        [q0 * q0 + qx * qx - qy * qy - qz * qz, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
        [2 * (qy * qx + q0 * qz), q0 * q0 - qx * qx + qy * qy - qz * qz, 2 * (qy * qz - q0 * qx)],
        [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0 * q0 - qx * qx - qy * qy + qz * qz],
    ])
    rx = xc @ r.T
    scale = (rx * yc).sum() / (xc * xc).sum()
    resid = scale * rx - yc
    return math.sqrt((resid ** 2).sum(1).mean())


def brute_chamfer_normalized(a, b):
    def norm(v):
        c = v - v.mean(0)
        r = math.sqrt((c ** 2).sum(1).mean())
        return c / r, r

    na, ra = norm(np.asarray(a, float))
    nb, rb = norm(np.asarray(b, float))
    d = np.sqrt(((na[:, None, :] - nb[None, :, :]) ** 2).sum(-1))
    return 0.5 * (d.min(1).mean() + d.min(0).mean()) * 0.5 * (ra + rb)


def central_difference(f, x, h=1e-5):
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def max_rel_err(analytic, numeric, floor=1e-12):
    a = np.asarray(analytic, float)
    n = np.asarray(numeric, float)
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)).max())


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_splat_case(rng):
    """A grid of at most 8^3 voxels and 1..3 random posed slices that cross it."""
    from icecontour.geometry import GridSpec, Pose, PosedSlice

    dims = tuple(int(d) for d in rng.integers(1, 9, 3))
    spacing = tuple(float(s) for s in rng.uniform(0.5, 1.5, 3))
    grid = GridSpec(dims, spacing, tuple(rng.uniform(-3, 3, 3)))
    slices = []
    for _ in range(int(rng.integers(1, 4))):
        h, w = (int(x) for x in rng.integers(1, 9, 2))
        su, sv = (float(x) for x in rng.uniform(0.3, 1.5, 2))
        r = random_rotation(rng) if rng.random() < 0.7 else np.eye(3)
        center = grid.center() + rng.uniform(-2, 2, 3)
        t = center - r[:, 0] * su * (w - 1) / 2 - r[:, 1] * sv * (h - 1) / 2
        px = rng.uniform(-1, 1, (h, w))
        valid = rng.random((h, w)) < 0.85
        slices.append(PosedSlice(px, su, sv, Pose.from_rt(r, t), valid))
    return grid, slices
