"""Label encodings, Dice / ASSD, inter-rater reliability and tabular reports.

Label arrays may be 2D (slice masks) or 3D (volumes).  ``ALL`` selects the
pooled foreground (classes 1..6 merged into one binary mask).
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .sparse_volume import N_CLASSES, STRUCTURES

ALL = "all"
UNDEFINED = math.nan


def is_undefined(x):
    return x is None or (isinstance(x, float) and math.isnan(x))


def _arr(labels):
    return np.asarray(getattr(labels, "classes", labels))


def one_hot(labels, n_classes=N_CLASSES):
    """``C x spatial`` float score map with a single 1 per location."""
    a = _arr(labels)
    if a.size and (a.min() < 0 or a.max() >= n_classes):
        raise ValidationError(f"class id outside 0..{n_classes - 1}")
    out = np.zeros((n_classes,) + a.shape)
    for c in range(n_classes):
        out[c] = a == c
    return out


def argmax_decode(scores):
    """Per-location channel argmax; ties resolve to the lowest class index."""
    s = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValidationError("score map contains non-finite values")
    return np.argmax(s, axis=0).astype(np.uint8)


def _binary(a, cls):
    if cls == ALL:
        return a > 0
    if not 1 <= int(cls) < N_CLASSES:
        raise ValidationError(f"class must be 1..6 or 'all', got {cls!r}")
    return a == int(cls)


def dice(pred, gt, cls=ALL):
    """Dice overlap; both masks empty -> 1.0, exactly one empty -> 0.0."""
    p, g = _arr(pred), _arr(gt)
    if p.shape != g.shape:
        raise ValidationError(f"shape mismatch {p.shape} vs {g.shape}")
    p, g = _binary(p, cls), _binary(g, cls)
    sp, sg = int(p.sum()), int(g.sum())
    if sp + sg == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / (sp + sg)


def surface(mask):
    """Foreground voxels with at least one face-adjacent background neighbour.

    Locations beyond the array border count as background.
    """
    m = np.asarray(mask, bool)
    padded = np.pad(m, 1, constant_values=False)
    eroded = ndimage.binary_erosion(padded, structure=ndimage.generate_binary_structure(m.ndim, 1))
    inner = tuple(slice(1, -1) for _ in range(m.ndim))
    return m & ~eroded[inner]


def _spacing(spacing, ndim):
    sp = np.broadcast_to(np.asarray(spacing, float), (ndim,))
    if np.any(sp <= 0):
        raise ValidationError("spacing must be positive")
    return tuple(sp)


def surface_distances(pred, gt, cls=ALL, spacing=1.0):
    """Distances (mm) from each pred-surface voxel to the gt surface and vice versa.

    Returns ``(d_pred_to_gt, d_gt_to_pred)`` or ``None`` if either surface is empty.
    """
    p, g = _arr(pred), _arr(gt)
    if p.shape != g.shape:
        raise ValidationError(f"shape mismatch {p.shape} vs {g.shape}")
    sp = _spacing(spacing, p.ndim)
    sp_, sg_ = surface(_binary(p, cls)), surface(_binary(g, cls))
    if not sp_.any() or not sg_.any():
        return None
    dt_g = ndimage.distance_transform_edt(~sg_, sampling=sp)
    dt_p = ndimage.distance_transform_edt(~sp_, sampling=sp)
    return dt_g[sp_], dt_p[sg_]


def assd(pred, gt, cls=ALL, spacing=1.0):
    """Average symmetric surface distance in mm; NaN when either surface is empty."""
    d = surface_distances(pred, gt, cls, spacing)
    if d is None:
        return UNDEFINED
    return 0.5 * (float(d[0].mean()) + float(d[1].mean()))


CLASS_KEYS = tuple(range(1, N_CLASSES)) + (ALL,)


def irr(items, spacing=1.0):
    """Inter-rater reliability over items, each a list of >= 2 rater masks.

    Dice and ASSD are averaged over all unordered rater pairs of an item, then
    over items with equal weight.  Undefined ASSD pairs are left out and counted
    in ``assd_excluded``.
    """
    if not items:
        raise ValidationError("irr needs at least one item")
    out = {}
    for key in CLASS_KEYS:
        item_dice, item_assd, excluded = [], [], 0
        for raters in items:
            if len(raters) < 2:
                raise ValidationError("irr needs at least two raters per item")
            ds, ss = [], []
            for a, b in itertools.combinations(raters, 2):
                ds.append(dice(a, b, key))
                s = assd(a, b, key, spacing)
                if is_undefined(s):
                    excluded += 1
                else:
                    ss.append(s)
            item_dice.append(float(np.mean(ds)))
            if ss:
                item_assd.append(float(np.mean(ss)))
        out[key] = {
            "dice": float(np.mean(item_dice)),
            "assd": float(np.mean(item_assd)) if item_assd else UNDEFINED,
            "assd_excluded": excluded,
            "items": len(items),
        }
    return out


@dataclass
class EvaluationReport:
    """Per-structure Dice (fraction) and ASSD (mm) for one model."""

    name: str
    per_structure: dict = field(default_factory=dict)  # structure name -> {"dice", "assd", "n"}
    total: dict = field(default_factory=dict)  # {"dice", "assd", "n"}

    def __post_init__(self):
        for row in list(self.per_structure.values()) + ([self.total] if self.total else []):
            d = row.get("dice", UNDEFINED)
            if not is_undefined(d) and not 0.0 <= d <= 1.0:
                raise ValidationError(f"dice {d} outside [0, 1]")
            a = row.get("assd", UNDEFINED)
            if not is_undefined(a) and a < 0:
                raise ValidationError(f"assd {a} is negative")

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], dict(d.get("per_structure", {})), dict(d.get("total", {})))

    def to_dict(self):
        return {"name": self.name, "per_structure": self.per_structure, "total": self.total}


def _mean_defined(xs):
    xs = [x for x in xs if not is_undefined(x)]
    return (float(np.mean(xs)), len(xs)) if xs else (UNDEFINED, 0)


def evaluate_pairs(name, pairs, spacing=1.0):
    """Aggregate Dice/ASSD over ``(pred, gt)`` label pairs.

    A structure only enters the mean for items where it is present in the
    prediction or the ground truth; undefined ASSD values are skipped.
    """
    per = {}
    for cls, sname in enumerate(STRUCTURES, start=1):
        ds, ss = [], []
        for p, g in pairs:
            pa, ga = _arr(p), _arr(g)
            if not ((pa == cls).any() or (ga == cls).any()):
                continue
            ds.append(dice(pa, ga, cls))
            ss.append(assd(pa, ga, cls, spacing))
        d, n = _mean_defined(ds)
        a, _ = _mean_defined(ss)
        per[sname] = {"dice": d, "assd": a, "n": n}
    ds, ss = [], []
    for p, g in pairs:
        pa, ga = _arr(p), _arr(g)
        if not ((pa > 0).any() or (ga > 0).any()):
            continue
        ds.append(dice(pa, ga, ALL))
        ss.append(assd(pa, ga, ALL, spacing))
    d, n = _mean_defined(ds)
    a, _ = _mean_defined(ss)
    return EvaluationReport(name, per, {"dice": d, "assd": a, "n": n})


ROW_NAMES = STRUCTURES + ("Total",)


def _cells(report, row):
    r = report.total if row == "Total" else report.per_structure.get(row, {})
    d, a = r.get("dice", UNDEFINED), r.get("assd", UNDEFINED)
    dtxt = "n/a" if is_undefined(d) else f"{100.0 * d:.1f}"
    atxt = "n/a" if is_undefined(a) else f"{a:.3f}"
    return dtxt, atxt


def format_report(reports) -> str:
    """Aligned text table with one ``Dice / ASSD`` cell per model (Dice in %, ASSD in mm)."""
    reports = list(reports)
    name_w = max(len(r) for r in ROW_NAMES + ("Structure",))
    col_w = [max(len(r.name), 15) for r in reports]
    head = f"{'Structure':<{name_w}}"
    sub = " " * name_w
    for r, w in zip(reports, col_w):
        head += "  " + r.name.center(w)
        sub += "  " + f"{'Dice':>5} / {'ASSD':<6}".center(w)
    rule = "-" * len(head)
    lines = [head.rstrip()]
    if not reports:
        return "\n".join(lines + [rule]) + "\n"
    lines += [sub.rstrip(), rule]
    for row in ROW_NAMES:
        if row == "Total":
            lines.append(rule)
        line = f"{row:<{name_w}}"
        for r, w in zip(reports, col_w):
            d, a = _cells(r, row)
            line += "  " + f"{d:>5} / {a:<6}".center(w)
        lines.append(line.rstrip())
    return "\n".join(lines) + "\n"


def report_csv(reports) -> str:
    """Same numbers as :func:`format_report`, full precision, one row per model x structure."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "structure", "dice", "assd_mm", "n"])
    for r in reports:
        for row in ROW_NAMES:
            cell = r.total if row == "Total" else r.per_structure.get(row, {})
            d, a = cell.get("dice", UNDEFINED), cell.get("assd", UNDEFINED)
            w.writerow([r.name, row, "" if is_undefined(d) else repr(float(d)),
                        "" if is_undefined(a) else repr(float(a)), cell.get("n", "")])
    return buf.getvalue()
