"""Non-learned stand-ins for the completion and segmentation generators."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .sparse_volume import N_CLASSES, DenseVolume, LabelVolume, SparseVolume

DEN_EPS = 1e-8
TRUNCATE = 8.0  # gaussian support in sigmas; wide enough to reach distant planes
RIDGE = 1e-9  # slope regulariser, relative to sigma^2


def complete_volume(sv: SparseVolume, sigma_mm=2.0, iterations=10) -> DenseVolume:
    """Iterative first-order normalized convolution.

    Every pass blurs ``certainty``, ``estimate * certainty`` and their
    coordinate moments with the same Gaussian, then evaluates a locally
    weighted linear fit (mean plus slope) at each voxel where the blurred
    certainty exceeds ``DEN_EPS``.  Voxels with occupancy >= 1 are reset to
    their observed value after each pass; certainty grows to the blurred
    certainty so information keeps spreading.  Voxels still unreached after the
    last pass copy the nearest defined voxel.  The result is clipped to the
    observed value range.
    """
    if not sigma_mm > 0:
        raise ValidationError("sigma_mm must be > 0")
    if int(iterations) < 1:
        raise ValidationError("iterations must be >= 1")
    occ = sv.occupancy
    if not occ.any():
        raise ValidationError("cannot complete a volume with no observed voxels")
    sigma = [sigma_mm / s for s in sv.grid.spacing]
    fixed = occ >= 1.0
    cert = np.minimum(occ, 1.0)
    est = sv.values.copy()
    defined = occ > 0
    # index coordinates centred on the grid keep the moment differences well conditioned
    coords = [np.arange(n, dtype=float) - (n - 1) / 2.0 for n in sv.grid.dims]
    pos = np.stack(np.meshgrid(*coords, indexing="ij"), axis=-1)
    ridge = RIDGE * float(np.mean(sigma)) ** 2 * np.eye(3)

    def blur(a):
        return ndimage.gaussian_filter(a, sigma, mode="constant", cval=0.0, truncate=TRUNCATE)

    for _ in range(int(iterations)):
        den = blur(cert)
        ok = den > DEN_EPS
        d = np.where(ok, den, 1.0)
        mean = blur(cert * est) / d
        mu = np.stack([blur(cert * pos[..., a]) / d for a in range(3)], axis=-1)
        cov = np.empty(sv.grid.dims + (3, 3))
        cross = np.empty(sv.grid.dims + (3,))
        for a in range(3):
            cross[..., a] = blur(cert * pos[..., a] * est) / d - mu[..., a] * mean
            for b in range(a, 3):
                cov[..., a, b] = cov[..., b, a] = (
                    blur(cert * pos[..., a] * pos[..., b]) / d - mu[..., a] * mu[..., b])
        slope = np.linalg.solve(cov + ridge, cross[..., None])[..., 0]
        fit = mean + ((pos - mu) * slope).sum(-1)
        est = np.where(ok, fit, est)
        est[fixed] = sv.values[fixed]
        defined |= ok
        cert = np.maximum(cert, np.minimum(den, 1.0))
        cert[~defined] = 0.0
    if not defined.all():
        _, ind = ndimage.distance_transform_edt(~defined, sampling=sv.grid.spacing, return_indices=True)
        est = est[tuple(ind)]
    lo, hi = sv.values[occ > 0].min(), sv.values[occ > 0].max()
    return DenseVolume(sv.grid, np.clip(est, lo, hi))


def segment_sparse(sv: SparseVolume, seed_labels: LabelVolume, max_dist_mm=10.0) -> LabelVolume:
    """Give each voxel the class of the nearest observed voxel within ``max_dist_mm``.

    Observed voxels (occupancy > 0) are the labelled set, background included;
    further than ``max_dist_mm`` from any of them a voxel stays background.
    Equidistant classes resolve to the lowest class id.
    """
    if seed_labels.grid != sv.grid:
        raise ValidationError("seed labels and sparse volume must share a grid")
    observed = sv.occupancy > 0
    if not observed.any():
        raise ValidationError("no labelled (observed) voxels to propagate")
    seeds = seed_labels.classes
    if np.any(seeds[~observed] != 0):
        raise ValidationError("seed labels must be zero outside observed voxels")
    best = np.full(sv.grid.dims, np.inf)
    out = np.zeros(sv.grid.dims, np.uint8)
    for c in range(N_CLASSES):
        m = observed & (seeds == c)
        if not m.any():
            continue
        d = ndimage.distance_transform_edt(~m, sampling=sv.grid.spacing)
        better = d < best
        best[better] = d[better]
        out[better] = c
    out[best > max_dist_mm] = 0
    return LabelVolume(sv.grid, out)
