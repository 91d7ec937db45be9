"""Matplotlib figures written next to the tabular outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .metrics import ROW_NAMES, is_undefined  # noqa: E402

# background, LA, LAA, LIPV, LSPV, RIPV, RSPV
CLASS_COLORS = ["#000000", "#1f4fd8", "#2ca02c", "#d62728", "#9467bd", "#f0f0f0", "#e8c619"]

_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def _values(report, key):
    out = []
    for row in ROW_NAMES:
        cell = report.total if row == "Total" else report.per_structure.get(row, {})
        v = cell.get(key, np.nan)
        out.append(np.nan if is_undefined(v) else float(v))
    return np.array(out)


def plot_report(reports, path):
    """Grouped bars of Dice (%) and ASSD (mm) per structure, one bar per model."""
    reports = list(reports)
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    x = np.arange(len(ROW_NAMES))
    width = 0.8 / max(len(reports), 1)
    for i, r in enumerate(reports):
        off = (i - (len(reports) - 1) / 2) * width
        axes[0].bar(x + off, 100 * _values(r, "dice"), width, label=r.name)
        axes[1].bar(x + off, _values(r, "assd"), width, label=r.name)
    axes[0].set_ylabel("Dice (%)")
    axes[0].set_ylim(0, 100)
    axes[1].set_ylabel("ASSD (mm)")
    axes[1].set_xticks(x, ROW_NAMES)
    if reports:
        axes[0].legend(loc="lower right", fontsize="small")
    for ax in axes:
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_slice_overlay(pixels, mask, path, validity=None, title=None):
    """Slice intensities in grey with the class mask blended on top."""
    fig, ax = plt.subplots(figsize=(4, 4))
    img = np.asarray(pixels, float)
    if validity is not None:
        img = np.where(validity, img, np.nan)
    ax.imshow(img, cmap="gray", vmin=-1, vmax=1, interpolation="nearest")
    m = np.ma.masked_equal(np.asarray(mask), 0)
    ax.imshow(m, cmap=ListedColormap(CLASS_COLORS), vmin=0, vmax=6, alpha=0.45, interpolation="nearest")
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize="small")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_volume_planes(values, path, title=None, vmin=-1, vmax=1, cmap="gray"):
    """Central axial / coronal / sagittal planes of a volume."""
    v = np.asarray(values, float)
    cx, cy, cz = (n // 2 for n in v.shape)
    planes = [v[:, :, cz].T, v[:, cy, :].T, v[cx, :, :].T]
    fig, axes = plt.subplots(1, 3, figsize=(9, 3))
    for ax, p, name in zip(axes, planes, ("z", "y", "x")):
        ax.imshow(p, cmap=cmap, vmin=vmin, vmax=vmax, origin="lower", interpolation="nearest")
        ax.set_title(f"{name} = centre", fontsize="small")
        ax.set_axis_off()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
