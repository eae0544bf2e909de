"""Command-line surface.

Subcommands:
  synth     render aligned samples from procedural or file-described scenes
  augment   derive misaligned samples (with ground-truth flow) from aligned ones
  calib     closed-form parameter estimation from flow + depth + mask
  convt     convert a depth map into the flow implied by an estimate
  refine    apply a stored kernel field, or fit one directly to a target
  eval      flow / depth / quantile metrics as JSON
  gradcheck finite-difference verification of the analytic gradients

Every randomized subcommand takes an explicit ``--seed``; with fixed flags
and seed the numeric outputs are bit-reproducible.  Errors exit nonzero with
a message on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import calib as calib_mod
from . import dataset_io, geometry, gradcheck, kpn, metrics, tofsim
from .errors import ToflabError

DEFAULT_OUT_ENV = "TOFLAB_OUT"


def _size(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"size must look like 640x480, got {text!r}") from exc


def _default_out():
    return os.environ.get(DEFAULT_OUT_ENV, ".")


def _write_report(report, path):
    text = json.dumps(report, indent=2, sort_keys=True)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _add_synth(sub):
    p = sub.add_parser("synth", help="render aligned samples")
    p.add_argument("--out", default=None, help="output directory (default $TOFLAB_OUT or .)")
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--size", type=_size, default=(640, 480))
    p.add_argument("--scene-file", default=None, help="render this scene JSON instead of procedural scenes")
    p.add_argument("--sigma", type=float, default=0.0, help="noise level relative to peak amplitude")
    p.add_argument("--bounces", type=int, default=16)
    p.add_argument("--focal", type=float, default=None, help="focal length in pixels")
    p.add_argument("--test-fraction", type=float, default=0.2,
                   help="share of samples listed as test in split.json")
    mpi = p.add_mutually_exclusive_group()
    mpi.add_argument("--mpi", dest="mpi", action="store_true", default=True)
    mpi.add_argument("--no-mpi", dest="mpi", action="store_false")
    return p


def _cmd_synth(args):
    out_root = args.out or _default_out()
    config = tofsim.SynthConfig(
        size=args.size, mpi=args.mpi, bounce_samples=args.bounces,
        noise_sigma=args.sigma, focal_px=args.focal,
    )
    directories = []
    for index in range(args.scenes):
        if args.scene_file:
            scene = tofsim.load_scene(args.scene_file)
        else:
            scene = tofsim.random_scene(args.seed + index)
        sample = tofsim.synthesize_sample(scene, config=config)
        directory = os.path.join(out_root, f"sample_{index:05d}")
        dataset_io.write_sample(directory, sample)
        tofsim.save_scene(os.path.join(directory, "scene.json"), scene)
        directories.append(directory)
        print(directory)
    if len(directories) >= 2:
        names = [os.path.basename(d) for d in directories]
        train, test = dataset_io.split_dataset(names, args.test_fraction, args.seed)
        _write_report({"train": train, "test": test,
                       "test_fraction": args.test_fraction, "seed": args.seed},
                      os.path.join(out_root, "split.json"))
    return 0


def _add_augment(sub):
    p = sub.add_parser("augment", help="derive misaligned samples from aligned ones")
    p.add_argument("--inp", "--in", dest="inp", required=True, help="aligned sample directory")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--principal-frac", type=float, default=0.025)
    p.add_argument("--translation-frac", type=float, default=0.30)
    p.add_argument("--t-ref-x", type=float, default=0.05)
    p.add_argument("--t-ref-y", type=float, default=0.05)
    return p


def _cmd_augment(args):
    sample = dataset_io.read_sample(args.inp)
    cfg = geometry.PerturbationConfig(
        principal_frac=args.principal_frac,
        translation_frac=args.translation_frac,
        t_ref_x=args.t_ref_x,
        t_ref_y=args.t_ref_y,
        seed=args.seed,
    )
    h, w = sample.shape
    deltas = geometry.sample_perturbation(cfg, (w, h))
    augmented = geometry.augment_sample(sample, deltas)
    out_dir = args.out or os.path.join(_default_out(), "augmented")
    dataset_io.write_sample(out_dir, augmented)
    print(out_dir)
    return 0


def _add_calib(sub):
    p = sub.add_parser("calib", help="estimate rig parameters from flow + depth")
    p.add_argument("--flow", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--report", default="-")
    return p


def _cmd_calib(args):
    flow = dataset_io.read_flow(args.flow)
    depth = dataset_io.read_pfm(args.depth)
    mask = dataset_io.read_mask(args.mask) if args.mask else None
    est = calib_mod.estimate_params(flow, depth, mask)
    _write_report({
        "t_x_star": est.t_x_star,
        "t_y_star": est.t_y_star,
        "c_x_star": est.c_x_star,
        "c_y_star": est.c_y_star,
        "residual_rms": est.residual_rms,
        "pixel_count": est.pixel_count,
        "condition": est.condition,
    }, args.report)
    return 0


def _add_convt(sub):
    p = sub.add_parser("convt", help="convert depth into the flow of an estimate")
    p.add_argument("--depth", required=True)
    p.add_argument("--params", required=True, help="JSON report from the calib subcommand")
    p.add_argument("--out", required=True)
    return p


def _cmd_convt(args):
    depth = dataset_io.read_pfm(args.depth)
    with open(args.params, encoding="utf-8") as fh:
        rep = json.load(fh)
    est = calib_mod.CalibEstimate(
        t_x_star=float(rep["t_x_star"]), t_y_star=float(rep["t_y_star"]),
        c_x_star=float(rep["c_x_star"]), c_y_star=float(rep["c_y_star"]),
        residual_rms=float(rep.get("residual_rms", 0.0)),
        pixel_count=int(rep.get("pixel_count", 0)),
        condition=float(rep.get("condition", 1.0)),
    )
    flow = calib_mod.convt_flow(depth, est)
    dataset_io.write_flow(args.out, flow)
    return 0


def _add_refine(sub):
    p = sub.add_parser("refine", help="apply or fit a per-pixel kernel field")
    p.add_argument("--depth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="norm_bias_first",
                   choices=[v.label for v in kpn.KpnVariant])
    p.add_argument("--kernels", default=None, help="kernel field to apply")
    p.add_argument("--fit", action="store_true", help="fit a kernel field to --target")
    p.add_argument("--target", default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--lam", type=float, default=10.0)
    p.add_argument("--save-kernels", default=None)
    p.add_argument("--fit-report", default=None)
    return p


def _cmd_refine(args):
    depth = dataset_io.read_pfm(args.depth)
    variant = kpn.KpnVariant.from_label(args.variant)
    if args.fit:
        if not args.target:
            raise ToflabError("--fit requires --target")
        target = dataset_io.read_pfm(args.target)
        mask = dataset_io.read_mask(args.mask) if args.mask else None
        config = kpn.DirectFitConfig(step=args.step, iterations=args.iters, lam=args.lam)
        result = kpn.direct_fit(depth, target, mask, variant, config)
        field = result.kernel_field
        if args.fit_report:
            _write_report({"iterations": len(result.trace) - 1,
                           "loss_trace": result.trace}, args.fit_report)
    elif args.kernels:
        field = dataset_io.read_kernels(args.kernels)
    else:
        raise ToflabError("refine needs --kernels or --fit")
    refined = kpn.apply(depth, field, variant)
    dataset_io.write_pfm(args.out, refined)
    if args.save_kernels:
        dataset_io.write_kernels(args.save_kernels, field)
    return 0


def _add_eval(sub):
    p = sub.add_parser("eval", help="flow / depth / quantile metrics as JSON")
    p.add_argument("--pred", default=None, help="refined depth")
    p.add_argument("--gt", default=None, help="ground-truth depth")
    p.add_argument("--input-depth", default=None, help="unrefined depth for quantile classes")
    p.add_argument("--mask", default=None)
    p.add_argument("--flow-pred", default=None)
    p.add_argument("--flow-gt", default=None)
    p.add_argument("--lam", type=float, default=10.0)
    p.add_argument("--range-limit", type=float, default=4.0)
    p.add_argument("--report", default="-")
    return p


def _cmd_eval(args):
    report = {}
    mask = dataset_io.read_mask(args.mask) if args.mask else None
    if args.flow_pred or args.flow_gt:
        if not (args.flow_pred and args.flow_gt):
            raise ToflabError("flow evaluation needs both --flow-pred and --flow-gt")
        pred = dataset_io.read_flow(args.flow_pred)
        gt = dataset_io.read_flow(args.flow_gt)
        report["aepe"] = metrics.aepe(pred, gt, mask)
    if args.pred or args.gt:
        if not (args.pred and args.gt):
            raise ToflabError("depth evaluation needs both --pred and --gt")
        pred = dataset_io.read_pfm(args.pred)
        gt = dataset_io.read_pfm(args.gt)
        total, data_term, grad_term = metrics.depth_loss(pred, gt, mask, lam=args.lam)
        report["depth_loss"] = total
        report["data_term"] = data_term
        report["grad_term"] = grad_term
        if args.input_depth:
            input_depth = dataset_io.read_pfm(args.input_depth)
            q = metrics.quantile_mae(input_depth, pred, gt, mask,
                                     range_limit=args.range_limit)
            report.update({
                "mae_low": q.mae_low,
                "mae_mid": q.mae_mid,
                "mae_high": q.mae_high,
                "mae_all": q.mae_all,
                "outlier_fraction": q.outlier_fraction,
            })
    if not report:
        raise ToflabError("nothing to evaluate: give flow and/or depth inputs")
    _write_report(report, args.report)
    return 0


def _add_gradcheck(sub):
    p = sub.add_parser("gradcheck", help="compare analytic gradients to finite differences")
    p.add_argument("--op", default="all", choices=["warp", "calib", "kpn", "all"])
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--report", default="-")
    return p


def _cmd_gradcheck(args):
    report = gradcheck.run_all(
        op=args.op, eps=args.eps, seed=args.seed, instances=args.instances)
    _write_report(report, args.report)
    worst = max(entry["max_rel_err"] for entry in report["checks"])
    print(f"max rel err {worst:.3e}", file=sys.stderr)
    return 0 if worst < 1e-5 else 1


_COMMANDS = {
    "synth": _cmd_synth,
    "augment": _cmd_augment,
    "calib": _cmd_calib,
    "convt": _cmd_convt,
    "refine": _cmd_refine,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="toflab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_synth(sub)
    _add_augment(sub)
    _add_calib(sub)
    _add_convt(sub)
    _add_refine(sub)
    _add_eval(sub)
    _add_gradcheck(sub)
    return parser


def run(argv=None):
    """Parse ``argv`` and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ToflabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
