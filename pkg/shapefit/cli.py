#!/usr/bin/env python3
"""
CLI entry point for shapefit.

Subcommands:
    refine           fit every detection of a stereo frame
    synth            render a synthetic frame bundle (car or sphere preset)
    build-model      PCA shape model from exemplar grids or a preset family
    check-jacobians  analytic vs finite-difference Jacobians of every residual
    metrics          completeness / accuracy / F1 / RMSE between two xyz clouds

Exit status is 0 on success, 1 when a fit or check fails, 2 on input errors.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from . import logger
from .bundle_io import (
    LoadedBundle,
    ground_truth_record,
    load_bundle,
    load_cloud,
    load_detections,
    load_frame,
    load_plane,
    result_record,
    save_cloud,
    save_depth,
    write_bundle_record,
    write_calibration,
    write_detection_records,
    write_plane,
    write_results,
)
from .config_loader import load_config
from .config_models import (
    DetectionRecord,
    FitStatus,
    FrameBundleRecord,
    FrameResultsRecord,
    ShapeFitConfig,
)
from .errors import ShapeFitError
from .images import save_gray, save_mask
from .jacobian_check import JACOBIAN_CHECKS, run_jacobian_suite
from .metrics import shape_metrics
from .priors import default_plane
from .renderer import save_overlay, write_report
from .sdf_grid import load_grid
from .shape_model import build_model, decode, load_model, save_model
from .solver import FitResult, fit_frame
from .synth import (
    PRESETS,
    build_preset_model,
    default_car_pose,
    perturb_pose,
    render_scene,
    scene_detection,
    surface_point_cloud,
    synthetic_rig,
)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT_ERROR = 2
DEFAULT_TAU = 0.2


def _config_from_args(args) -> ShapeFitConfig:
    overrides: Dict[str, object] = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ShapeFitError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    if getattr(args, "threads", None) is not None:
        overrides["solver.threads"] = args.threads
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "K", None) is not None:
        overrides["shape_dim"] = args.K
    config, warnings = load_config(args.config, overrides)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return config


# === refine ===

def _load_refine_inputs(args) -> LoadedBundle:
    if args.bundle:
        return load_bundle(args.bundle)
    missing = [flag for flag, value in (("--left", args.left), ("--right", args.right),
                                        ("--calib", args.calib), ("--detections", args.detections),
                                        ("--model", args.model)) if not value]
    if missing:
        raise ShapeFitError(f"refine needs --bundle or all of {', '.join(missing)}")
    frame = load_frame(args.left, args.right, args.calib)
    plane = load_plane(args.plane) if args.plane else default_plane()
    record = FrameBundleRecord(left=str(args.left), right=str(args.right), calibration=str(args.calib),
                               detections=str(args.detections), model=str(args.model),
                               plane=str(args.plane) if args.plane else None)
    return LoadedBundle(path=Path(args.detections), record=record, frame=frame,
                        detections=load_detections(args.detections, frame.shape),
                        model=load_model(args.model), plane=plane)


def _estimated_cloud(bundle: LoadedBundle, result: FitResult) -> np.ndarray:
    grid = result.shape if result.shape is not None else decode(bundle.model, result.z)
    return surface_point_cloud(grid, result.object_to_camera)


def run_refine(args) -> int:
    config = _config_from_args(args)
    bundle = _load_refine_inputs(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results = fit_frame(bundle.frame, bundle.detections, bundle.model, config.solver,
                        bundle.plane, config.sampling)
    records = []
    for result in results:
        metrics = None
        cloud = None
        if args.export_clouds or result.instance_id in bundle.ground_truth_clouds:
            cloud = _estimated_cloud(bundle, result)
        if args.export_clouds:
            save_cloud(cloud, out_dir / f"instance_{result.instance_id}.xyz")
        gt = bundle.ground_truth_clouds.get(result.instance_id)
        if gt is not None and cloud.size and gt.size:
            metrics = shape_metrics(cloud, gt, args.tau)
        records.append(result_record(result, metrics))

    frame_results = FrameResultsRecord(bundle=str(bundle.path), results=records)
    write_results(frame_results, out_dir / "results.json")
    write_report(frame_results, out_dir / "report.md", config.solver)
    if args.overlay:
        fits = [(det.bbox, res) for det, res in zip(bundle.detections, results)]
        save_overlay(bundle.frame.left, bundle.model, fits, bundle.frame.rig, out_dir / "overlay.png",
                     config.solver.zeta, config.solver.ray_samples,
                     sharpness=config.solver.silhouette_sharpness)

    for r in records:
        print(f"instance {r.id}: {r.status.value} after {r.iterations} iterations, "
              f"E={r.energies.total:.6g}")
    failed = [r.id for r in records if r.status is FitStatus.FAILED]
    if failed:
        logger.error(f"instances {failed} failed")
        return EXIT_FAILED
    return EXIT_OK


# === synth ===

def run_synth(args) -> int:
    config = _config_from_args(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    render = config.render

    model = build_preset_model(args.preset, config.shape_dim, config.grid, args.count, config.seed)
    z = rng.normal(size=model.K) * model.sigmas * args.code_scale
    gt_pose = default_car_pose()
    rig = synthetic_rig(render)
    scene = render_scene(model, z, gt_pose, rig, render.width, render.height, render=render)
    init_pose = perturb_pose(gt_pose, args.perturb_translation, args.perturb_yaw, rng)
    detection = scene_detection(scene, init_pose)

    save_gray(scene.left.image, out_dir / "left.pgm")
    save_gray(scene.right.image, out_dir / "right.pgm")
    save_mask(scene.left.mask, out_dir / "mask_left_0.pgm")
    save_mask(scene.right.mask, out_dir / "mask_right_0.pgm")
    write_calibration(rig, out_dir / "calib.txt")
    write_plane(default_plane(), out_dir / "plane.txt")
    save_model(model, out_dir / "model.sdfm")
    save_depth(scene.left.depth, out_dir / "gt_depth_left.sdfd")
    save_cloud(scene.cloud, out_dir / "gt_cloud_0.xyz")
    write_detection_records([DetectionRecord(
        id=detection.id, bbox=detection.bbox, bbox_right=detection.bbox_right,
        mask_left="mask_left_0.pgm", mask_right="mask_right_0.pgm",
        init_pose=init_pose.matrix().tolist(),
    )], out_dir / "detections.json")
    write_bundle_record(FrameBundleRecord(
        left="left.pgm", right="right.pgm", calibration="calib.txt", detections="detections.json",
        model="model.sdfm", plane="plane.txt",
        ground_truth={detection.id: ground_truth_record(gt_pose, z, "gt_cloud_0.xyz")},
    ), out_dir / "bundle.json")
    print(f"wrote {args.preset} bundle to {out_dir / 'bundle.json'}")
    return EXIT_OK


# === build-model ===

def run_build_model(args) -> int:
    config = _config_from_args(args)
    if args.exemplars:
        model = build_model([load_grid(p) for p in args.exemplars], config.shape_dim)
    else:
        model = build_preset_model(args.preset, config.shape_dim, config.grid, args.count, config.seed)
    save_model(model, args.out)
    print(f"wrote model K={model.K} sigmas={np.round(model.sigmas, 4).tolist()} to {args.out}")
    return EXIT_OK


# === check-jacobians ===

def run_check_jacobians(args) -> int:
    reports = run_jacobian_suite(args.configurations, args.seed, args.names)
    for report in reports:
        check = JACOBIAN_CHECKS[report.name]
        print(f"{report.name:18s} {'PASS' if report.passed else 'FAIL'}  "
              f"configs={report.configurations} failures={report.failures} "
              f"worst_abs={report.worst_error:.3g} worst_rel={report.worst_relative:.3g} "
              f"redrawn={report.redrawn} tol=({check.rel_tol:g} rel, {check.abs_tol:g} abs)")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


# === metrics ===

def run_metrics(args) -> int:
    metrics = shape_metrics(load_cloud(args.estimated), load_cloud(args.ground_truth), args.tau)
    print(json.dumps({"completeness": metrics.completeness, "accuracy": metrics.accuracy,
                      "f1": metrics.f1, "rmse": metrics.rmse, "threshold": metrics.threshold}, indent=2))
    return EXIT_OK


# === Parser ===

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="Config override, e.g. --set zeta=60 or --set sampling.fine_cell=4")
    parser.add_argument("--seed", type=int, help="Random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapefit",
                                     description="Joint pose and shape refinement of objects in stereo frames")
    sub = parser.add_subparsers(dest="command", required=True)

    refine = sub.add_parser("refine", help="Refine every detection of a frame")
    _add_common(refine)
    refine.add_argument("--bundle", help="Frame bundle JSON (replaces the individual inputs)")
    refine.add_argument("--left", help="Left image")
    refine.add_argument("--right", help="Right image")
    refine.add_argument("--calib", help="Calibration file with P2/P3 lines")
    refine.add_argument("--detections", help="Detections JSON")
    refine.add_argument("--model", help="Shape model file")
    refine.add_argument("--plane", help="Ground plane file (nx ny nz d)")
    refine.add_argument("--out-dir", required=True, help="Directory for results, report and overlays")
    refine.add_argument("--overlay", action="store_true", help="Write overlay.png with the fitted contours")
    refine.add_argument("--export-clouds", action="store_true", help="Write refined surfaces as xyz")
    refine.add_argument("--threads", type=int, help="Instances fitted concurrently")
    refine.add_argument("--tau", type=float, default=DEFAULT_TAU, help="Metrics matching radius (m)")
    refine.set_defaults(func=run_refine)

    synth = sub.add_parser("synth", help="Render a synthetic frame bundle")
    _add_common(synth)
    synth.add_argument("--preset", choices=PRESETS, default="car")
    synth.add_argument("--out-dir", required=True)
    synth.add_argument("--K", type=int, help="Model dimension (overrides shape_dim)")
    synth.add_argument("--count", type=int, help="Exemplars in the model family")
    synth.add_argument("--code-scale", type=float, default=0.5,
                       help="Ground-truth code drawn as N(0, (scale * sigma)^2)")
    synth.add_argument("--perturb-translation", type=float, default=0.3, help="Init pose shift (m)")
    synth.add_argument("--perturb-yaw", type=float, default=5.0, help="Init pose yaw error (degrees)")
    synth.set_defaults(func=run_synth)

    build = sub.add_parser("build-model", help="Build a PCA shape model")
    _add_common(build)
    source = build.add_mutually_exclusive_group()
    source.add_argument("--exemplars", nargs="+", help="Exemplar grid files")
    source.add_argument("--preset", choices=PRESETS, default="car")
    build.add_argument("--count", type=int, help="Preset exemplar count")
    build.add_argument("--K", type=int, help="Number of components (overrides shape_dim)")
    build.add_argument("--out", required=True, help="Output model file")
    build.set_defaults(func=run_build_model)

    check = sub.add_parser("check-jacobians", help="Compare analytic and numeric Jacobians")
    check.add_argument("--configurations", type=int, default=500)
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--names", nargs="+", choices=sorted(JACOBIAN_CHECKS))
    check.set_defaults(func=run_check_jacobians)

    metrics = sub.add_parser("metrics", help="Compare two xyz point clouds")
    metrics.add_argument("--estimated", required=True)
    metrics.add_argument("--ground-truth", required=True)
    metrics.add_argument("--tau", type=float, default=DEFAULT_TAU)
    metrics.set_defaults(func=run_metrics)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ShapeFitError, OSError, ValueError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
