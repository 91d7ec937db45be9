"""Command-line entry point: ``icecontour <subcommand> ...``.

Exit codes: 0 success, 2 validation/usage error, 1 internal error.  The log
level comes from ``ICECONTOUR_LOG_LEVEL`` (default INFO).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import complete_volume, segment_sparse
from .config import RunConfig
from .errors import ValidationError
from .io import (dump_json, load_manifest, load_mask, load_mesh, load_volume, save_manifest,
                 save_mask, save_mesh, save_reports, save_volume)
from .losses import PRESETS, adv_loss, rec_loss, stack_shapes, total_loss
from .mesh import pair_mesh
from .metrics import evaluate_pairs, format_report, report_csv
from .phantom import default_grid, make_phantom, simulate_ice_sweep
from .sparse_volume import (CLASS_NAMES, occupancy_stats, plan_grid, project_labels, splat_labels,
                            splat_slices)

log = logging.getLogger("icecontour")


def _config(args, **overrides):
    cfg = RunConfig.load(getattr(args, "config", None), overrides)
    cfg.echo()
    log.info("effective seed=%d", cfg.seed)
    return cfg


# -- subcommands ----------------------------------------------------------------

def cmd_phantom_gen(args):
    cfg = _config(args, **{"seed": args.seed, "sweep.n_slices": args.n_slices})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.phantom_params()
    if args.no_noise:
        params = type(params).from_dict({**params.to_dict(), "noise": False})
    grid = default_grid(cfg.data["grid"]["phantom_dims"], cfg.data["grid"]["spacing"])
    ph = make_phantom(params, grid)
    sweep = cfg.sweep_params()
    slices = simulate_ice_sweep(ph, sweep)
    save_volume(out / "ct.json", ph.ct)
    save_volume(out / "labels.json", ph.labels)
    (out / "meshes").mkdir(exist_ok=True)
    for m in ph.meshes:
        save_mesh(out / "meshes" / f"{CLASS_NAMES[m.class_id]}.off", m)
    save_manifest(out, slices, patient_id=f"phantom-seed{cfg.seed}")
    dump_json({"phantom": params.to_dict(), "sweep": cfg.data["sweep"], "grid": grid.to_dict()},
              out / "phantom.json")
    if args.figures:
        from .plotting import plot_slice_overlay, plot_volume_planes
        plot_volume_planes(ph.ct.values, out / "ct.png", "CT-like phantom")
        s = slices[0]
        plot_slice_overlay(s.pixels, s.labels, out / "slice_000.png", s.validity, "slice 0")
    log.info("phantom written to %s: %d slices, grid %s", out, len(slices), grid.dims)
    return 0


def cmd_build_volume(args):
    cfg = _config(args, **{"grid.spacing": args.spacing, "grid.margin": args.margin,
                           "interp.splat": args.mode})
    _, slices = load_manifest(args.manifest)
    if args.grid_from:
        grid = load_volume(args.grid_from).grid
    else:
        grid = plan_grid(slices, cfg.data["grid"]["spacing"], cfg.data["grid"]["margin"])
    mode = cfg.data["interp"]["splat"]
    sv = splat_slices(slices, grid, mode)
    out = Path(args.out) if args.out else Path(args.manifest).parent / "sparse.json"
    save_volume(out, sv)
    seeds_out = Path(args.seeds_out) if args.seeds_out else out.with_name("seeds.json")
    if any(s.labels is not None for s in slices):
        save_volume(seeds_out, splat_labels(slices, grid))
    stats = occupancy_stats(sv)
    log.info("sparse volume %s (%s): observed %d/%d voxels (%.1f%%), total weight %.1f",
             out, mode, stats["observed"], stats["voxels"], 100 * stats["observed_fraction"],
             stats["total_weight"])
    if sv.meta.get("slices_outside"):
        log.warning("%d slices outside the grid", sv.meta["slices_outside"])
    return 0


def cmd_complete(args):
    cfg = _config(args, **{"baselines.sigma_mm": args.sigma, "baselines.iterations": args.iterations})
    sv = load_volume(args.sparse)
    b = cfg.data["baselines"]
    dense = complete_volume(sv, b["sigma_mm"], b["iterations"])
    save_volume(args.out, dense)
    if args.figures:
        from .plotting import plot_volume_planes
        plot_volume_planes(dense.values, Path(args.out).with_suffix(".png"), "completed volume")
    log.info("completed volume written to %s", args.out)
    return 0


def cmd_segment(args):
    cfg = _config(args, **{"baselines.max_dist_mm": args.max_dist})
    sv = load_volume(args.sparse)
    seeds = load_volume(args.seeds)
    lab = segment_sparse(sv, seeds, cfg.data["baselines"]["max_dist_mm"])
    save_volume(args.out, lab)
    counts = np.bincount(lab.classes.ravel(), minlength=7)
    log.info("segmentation written to %s; voxels per class %s", args.out,
             dict(zip(CLASS_NAMES, counts.tolist())))
    return 0


def cmd_project_mask(args):
    lab = load_volume(args.labels)
    _, slices = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(slices):
        mask = project_labels(lab, s)
        save_mask(out / f"mask_{k:03d}.pgm", mask)
        if args.figures:
            from .plotting import plot_slice_overlay
            plot_slice_overlay(s.pixels, mask.classes, out / f"mask_{k:03d}.png", s.validity, f"slice {k}")
    log.info("%d projected masks written to %s", len(slices), out)
    return 0


def _library(paths):
    files = []
    for p in paths:
        p = Path(p)
        files += sorted(p.glob("*.off")) if p.is_dir() else [p]
    if not files:
        raise ValidationError("mesh library is empty")
    return files


def cmd_pair_mesh(args):
    query = load_mesh(args.query)
    files = _library(args.library)
    idx, dist = pair_mesh(query, [load_mesh(f) for f in files])
    print(f"{idx}\t{files[idx]}\t{dist:.9g}")
    return 0


def cmd_evaluate(args):
    reports = []
    if args.pred or args.gt:
        if not (args.pred and args.gt):
            raise ValidationError("--pred and --gt must be given together")
        p, g = load_volume(args.pred), load_volume(args.gt)
        if p.grid != g.grid:
            raise ValidationError("predicted and ground-truth label volumes use different grids")
        reports.append(evaluate_pairs("3D volume", [(p.classes, g.classes)], g.grid.spacing))
    if args.pred_masks:
        if not args.manifest:
            raise ValidationError("--pred-masks requires --manifest")
        _, slices = load_manifest(args.manifest)
        pairs = []
        for k, s in enumerate(slices):
            if s.labels is None:
                raise ValidationError(f"slices[{k}] has no ground-truth labels")
            pm = load_mask(Path(args.pred_masks) / f"mask_{k:03d}.pgm")
            if pm.shape != s.shape:
                raise ValidationError(f"mask_{k:03d}.pgm has shape {pm.shape}, slice is {s.shape}")
            pairs.append((np.where(s.validity, pm, 0), np.where(s.validity, s.labels, 0)))
        reports.append(evaluate_pairs("projected 2D", pairs, (s.spacing_v, s.spacing_u)))
    if not reports:
        raise ValidationError("nothing to evaluate: give --pred/--gt and/or --pred-masks/--manifest")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = format_report(reports)
    (out / "report.txt").write_text(text)
    (out / "report.csv").write_text(report_csv(reports))
    save_reports(out / "report.json", reports)
    if not args.no_figures:
        from .plotting import plot_report
        plot_report(reports, out / "report.png")
    sys.stdout.write(text)
    return 0


def cmd_loss_check(args):
    cfg = _config(args, seed=args.seed)
    lam = cfg.loss_config()
    rng = np.random.default_rng(cfg.seed)
    n, h = args.n, 1e-5
    worst = 0.0

    def fd_check(f, x, g):
        nonlocal worst
        for i in range(x.size):
            xp, xm = x.copy(), x.copy()
            xp.flat[i] += h
            xm.flat[i] -= h
            num = (f(xp) - f(xm)) / (2 * h)
            worst = max(worst, abs(num - g.flat[i]) / max(abs(num), abs(g.flat[i]), 1e-12))

    terms = {}
    for key, norm in (("s", "L2"), ("c", "L1"), ("r", "L2")):
        pred, gt = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
        real, fake = rng.uniform(0.05, 0.95, n), rng.uniform(0.05, 0.95, n)
        terms[f"rec_{key}"], g = rec_loss(pred, gt, norm)
        fd_check(lambda x: rec_loss(x, gt, norm)[0], pred, g)
        terms[f"adv_{key}"], g = adv_loss(real, fake, "generator")
        fd_check(lambda x: adv_loss(real, x, "generator")[0], fake, g["fake"])
        d_val, g = adv_loss(real, fake, "discriminator")
        terms[f"disc_{key}"] = d_val
        fd_check(lambda x: adv_loss(x, fake, "discriminator")[0], real, g["real"])
        fd_check(lambda x: adv_loss(real, x, "discriminator")[0], fake, g["fake"])
    for k in sorted(terms):
        print(f"{k:8s} {terms[k]:.12g}")
    print(f"total_3d {total_loss(terms, lam, '3d'):.12g}")
    print(f"total_2d {total_loss(terms, lam, '2d'):.12g}")
    print(f"max_fd_rel_err {worst:.3e}")
    return 0


def cmd_shapes(args):
    dims = args.dims
    blocks = PRESETS[args.preset]
    print(f"input {'x'.join(map(str, dims))}")
    for i, (b, ext) in enumerate(zip(blocks, stack_shapes(dims, blocks)), start=1):
        print(f"layer {i:2d} {b.kind:6s} k{b.k} s{b.s} p{b.p} -> {'x'.join(map(str, ext))}")
    return 0


# -- parser -------------------------------------------------------------------------

def _int_list(text):
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="icecontour", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="JSON run config")
        sp.set_defaults(func=func)
        return sp

    sp = add("phantom-gen", cmd_phantom_gen, "synthesize a phantom, its meshes and an ICE sweep")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-slices", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-noise", action="store_true")
    sp.add_argument("--figures", action="store_true")

    sp = add("build-volume", cmd_build_volume, "splat a sweep manifest into a sparse volume")
    sp.add_argument("manifest")
    sp.add_argument("--out")
    sp.add_argument("--seeds-out")
    sp.add_argument("--grid-from", help="reuse the grid of an existing volume file")
    sp.add_argument("--spacing", type=float)
    sp.add_argument("--margin", type=float)
    sp.add_argument("--mode", choices=["nearest", "trilinear"])

    sp = add("complete", cmd_complete, "normalized-convolution completion of a sparse volume")
    sp.add_argument("sparse")
    sp.add_argument("--out", required=True)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--figures", action="store_true")

    sp = add("segment", cmd_segment, "nearest-label segmentation of a sparse volume")
    sp.add_argument("sparse")
    sp.add_argument("--seeds", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-dist", type=float)

    sp = add("project-mask", cmd_project_mask, "project a label volume onto every manifest slice")
    sp.add_argument("labels")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--figures", action="store_true")

    sp = add("pair-mesh", cmd_pair_mesh, "closest library mesh after Procrustes alignment")
    sp.add_argument("query")
    sp.add_argument("library", nargs="+", help="OFF files and/or directories of them")

    sp = add("evaluate", cmd_evaluate, "Dice/ASSD report for 3D labels and/or projected 2D masks")
    sp.add_argument("--pred")
    sp.add_argument("--gt")
    sp.add_argument("--pred-masks")
    sp.add_argument("--manifest")
    sp.add_argument("--out", default=".")
    sp.add_argument("--no-figures", action="store_true")

    sp = add("loss-check", cmd_loss_check, "loss terms and finite-difference gradient check")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n", type=int, default=16)

    sp = add("shapes", cmd_shapes, "spatial extents through a layer preset")
    sp.add_argument("--dims", required=True, type=_int_list, help="comma-separated extents, e.g. 256,256,256")
    sp.add_argument("--preset", choices=sorted(PRESETS), default="unet8")
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("ICECONTOUR_LOG_LEVEL", "INFO").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        log.error("%s", e)
        return 2
    except Exception:
        log.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
