"""Adversarial and reconstruction losses with analytic gradients, plus layer-shape arithmetic.

The adversarial term uses the standard conditional-GAN form: the discriminator
minimises ``-mean(log D(real)) - mean(log(1 - D(fake)))`` and the generator the
non-saturating ``-mean(log D(fake))``.  Expectations are batch means.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ShapeError, ValidationError

EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    """Balancing coefficients; the defaults are the published training weights."""

    lambda_rec_s: float = 1000.0
    lambda_adv_s: float = 0.2
    lambda_rec_c: float = 100.0
    lambda_adv_c: float = 1.0
    lambda_rec_r: float = 1000.0
    lambda_adv_r: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError(f"{f.name} must be a non-negative number, got {v!r}")

    def to_dict(self):
        return asdict(self)


def _scores(x, what):
    a = np.asarray(x, dtype=float)
    if a.size == 0:
        raise ValidationError(f"{what} scores are empty")
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise ValidationError(f"{what} scores must lie in [0, 1] before clamping")
    return np.clip(a, EPS, 1.0 - EPS)


def adv_loss(real_scores, fake_scores, role="discriminator"):
    """Adversarial loss and its gradients w.r.t. the (clamped) scores.

    Returns ``(value, {"real": d/d real, "fake": d/d fake})``.  For the
    generator role the real scores do not enter and their gradient is zero.
    """
    fake = _scores(fake_scores, "fake")
    nf = fake.size
    if role == "discriminator":
        real = _scores(real_scores, "real")
        nr = real.size
        value = -np.log(real).mean() - np.log1p(-fake).mean()
        grads = {"real": -1.0 / (nr * real), "fake": 1.0 / (nf * (1.0 - fake))}
    elif role == "generator":
        real = np.asarray(real_scores, dtype=float) if real_scores is not None else np.zeros(0)
        value = -np.log(fake).mean()
        grads = {"real": np.zeros_like(real), "fake": -1.0 / (nf * fake)}
    else:
        raise ValidationError(f"role must be 'discriminator' or 'generator', got {role!r}")
    return float(value), grads


def rec_loss(pred, gt, norm="L2"):
    """Mean absolute (L1) or mean squared (L2) error and its gradient w.r.t. ``pred``."""
    p = np.asarray(pred, dtype=float)
    g = np.asarray(gt, dtype=float)
    if p.shape != g.shape:
        raise ValidationError(f"shape mismatch {p.shape} vs {g.shape}")
    if p.size == 0:
        raise ValidationError("reconstruction loss on empty tensors")
    d = p - g
    n = d.size
    if norm == "L1":
        return float(np.abs(d).mean()), np.sign(d) / n
    if norm == "L2":
        return float((d * d).mean()), 2.0 * d / n
    raise ValidationError(f"norm must be 'L1' or 'L2', got {norm!r}")


STAGE_TERMS = {
    "3d": (("rec_s", "lambda_rec_s"), ("adv_s", "lambda_adv_s"),
           ("rec_c", "lambda_rec_c"), ("adv_c", "lambda_adv_c")),
    "2d": (("rec_r", "lambda_rec_r"), ("adv_r", "lambda_adv_r")),
}


def total_loss(parts, cfg: LossConfig = LossConfig(), stage="3d"):
    """Weighted sum of the per-task terms for the 3D or 2D stage."""
    if stage not in STAGE_TERMS:
        raise ValidationError(f"stage must be '3d' or '2d', got {stage!r}")
    total = 0.0
    for term, lam in STAGE_TERMS[stage]:
        if term not in parts:
            raise ValidationError(f"missing loss term {term!r} for stage {stage}")
        total += getattr(cfg, lam) * float(parts[term])
    return total


@dataclass
class LossBreakdown:
    terms: dict
    total: float
    grads: dict


def stage_breakdown(stage, cfg, *, seg=None, comp=None, refine=None):
    """Evaluate every term of a stage from raw tensors.

    Each task argument is a dict with ``pred``, ``gt``, ``real``, ``fake``; the
    adversarial part is the generator objective.  Segmentation and refinement
    use L2 reconstruction, completion uses L1.
    """
    tasks = {"3d": (("s", seg, "L2"), ("c", comp, "L1")), "2d": (("r", refine, "L2"),)}[stage]
    terms, grads = {}, {}
    for key, t, norm in tasks:
        if t is None:
            raise ValidationError(f"missing inputs for task {key!r}")
        terms[f"rec_{key}"], grads[f"rec_{key}"] = rec_loss(t["pred"], t["gt"], norm)
        v, g = adv_loss(t.get("real"), t["fake"], "generator")
        terms[f"adv_{key}"], grads[f"adv_{key}"] = v, g["fake"]
    return LossBreakdown(terms, total_loss(terms, cfg, stage), grads)


# -- layer shape arithmetic -------------------------------------------------

@dataclass(frozen=True)
class Block:
    kind: str  # "conv" or "deconv"
    k: int
    s: int
    p: int


def conv_extent(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def deconv_extent(n, k, s, p):
    return (n - 1) * s - 2 * p + k


def stack_shapes(input_extents, blocks):
    """Spatial extents after every layer; works for any number of axes.

    Raises :class:`ShapeError` naming the first (1-based) layer whose output
    extent would drop below 1.
    """
    ext = tuple(int(n) for n in input_extents)
    if not ext or min(ext) < 1:
        raise ShapeError(f"input extents must be >= 1, got {ext}")
    out = []
    for i, b in enumerate(blocks, start=1):
        if isinstance(b, dict):
            b = Block(**b)
        if b.kind == "conv":
            new = tuple(conv_extent(n, b.k, b.s, b.p) for n in ext)
        elif b.kind == "deconv":
            new = tuple(deconv_extent(n, b.k, b.s, b.p) for n in ext)
        else:
            raise ShapeError(f"layer {i}: unknown block kind {b.kind!r}")
        if min(new) < 1:
            raise ShapeError(f"layer {i} ({b.kind} k{b.k} s{b.s} p{b.p}): extent {ext} -> {new}")
        out.append(new)
        ext = new
    return out


DOWN = Block("conv", 4, 2, 1)
UP = Block("deconv", 4, 2, 1)

PRESETS = {
    "unet8": [DOWN] * 8 + [UP] * 8,
    "encoder8": [DOWN] * 8,
    "disc3": [DOWN] * 3 + [Block("conv", 3, 1, 1)],
}
