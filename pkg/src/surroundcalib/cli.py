"""Command-line entry point: ``synth``, ``calibrate`` and ``evaluate``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, harness
from .bev import overlap_mask, render_bev, stitch
from .config import (
    RigConfig,
    CameraConfig,
    intrinsics_to_dict,
    load_gray,
    save_gray,
    save_mask,
)
from .errors import CalibrationError, ConfigError, NoImprovementWarning
from .report import build_report, dumps_report, format_table, load_report_poses, write_csv
from .search import CAMERA_IDS, NEIGHBOURS, calibrate_rig

log = logging.getLogger("surroundcalib")

EXIT_OK, EXIT_FAIL, EXIT_PARTIAL = 0, 1, 2
ADJACENT_PAIRS = (("front", "left"), ("front", "right"), ("left", "rear"), ("right", "rear"))


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def _rig_config(rig: harness.RigGroundTruth, model: str, seed: int, ground_truth: str | None) -> RigConfig:
    cams = []
    for name in CAMERA_IDS:
        cams.append(
            CameraConfig(
                name,
                model,
                intrinsics_to_dict(rig.intrinsics[name]),
                rig.poses[name].placement(),
                f"views/{name}.png",
            )
        )
    spec = harness.bev_spec_for(model == "fisheye")
    return RigConfig(tuple(cams), spec, seed=seed, ground_truth=ground_truth)


def cmd_synth(args) -> int:
    opts = {}
    if args.config:
        opts = json.loads(Path(args.config).read_text(encoding="utf-8"))
    fisheye = args.fisheye or bool(opts.get("fisheye", False))
    seed = args.seed if args.seed is not None else int(opts.get("seed", 0))
    perturb = args.perturb or opts.get("perturb", "reference")
    rot = args.rot_radius if args.rot_radius is not None else float(opts.get("rot_radius", 3.0))
    trans = args.trans_radius if args.trans_radius is not None else float(opts.get("trans_radius", 0.10))
    scale = args.scale if args.scale is not None else float(opts.get("scale", 1.0))
    noise = args.noise_sigma if args.noise_sigma is not None else float(opts.get("noise_sigma", 0.0))
    richness = float(opts.get("texture_richness", 1.0))

    out = Path(args.out)
    try:
        (out / "views").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_FAIL

    scene = harness.make_scene(seed, richness=richness)
    rig = harness.reference_rig(fisheye=fisheye, scale=scale)
    views = harness.render_synthetic_views(scene, rig, noise_sigma=noise, seed=seed)
    try:
        save_gray(out / "scene.png", scene.texture)
        for name, img in views.items():
            save_gray(out / "views" / f"{name}.png", img)
    except OSError as exc:
        print(f"error: cannot write images under {out}: {exc}", file=sys.stderr)
        return EXIT_FAIL

    if perturb == "reference":
        initial = harness.perturb_rig(rig, harness.REFERENCE_PERTURBATIONS)
    elif perturb == "random":
        initial = harness.perturb_rig(rig, rot_radius=rot, trans_radius=trans, rng=np.random.default_rng(seed))
    else:
        initial = rig
    model = "fisheye" if fisheye else "pinhole"
    gt_cfg = _rig_config(rig, model, seed, None)
    cfg = _rig_config(initial, model, seed, "rig_gt.json")
    gt_cfg.save(out / "rig_gt.json")
    cfg.save(out / "rig.json")
    applied = {
        n: {"d_roll": d.d_roll, "d_pitch": d.d_pitch, "d_yaw": d.d_yaw, "dx": d.dx, "dy": d.dy, "dz": d.dz}
        for n, d in initial.applied.items()
    }
    (out / "perturbations.json").write_text(json.dumps(applied, indent=2) + "\n", encoding="utf-8")

    # Overlap summary at ground truth, from the quantised images as written.
    spec = gt_cfg.bev
    bevs = {}
    for name in CAMERA_IDS:
        img = load_gray(out / "views" / f"{name}.png")
        try:
            bevs[name] = render_bev(img, rig.intrinsics[name], rig.poses[name], spec)
        except CalibrationError as exc:
            print(f"error: camera {name}: {exc}", file=sys.stderr)
            return EXIT_FAIL
    ok = True
    for a, b in ADJACENT_PAIRS:
        try:
            _, count = overlap_mask(bevs[a], bevs[b], spec, gt_cfg.min_overlap, (a, b))
            print(f"overlap {a:>5s}-{b:<5s} {count:8d} px")
        except CalibrationError as exc:
            print(f"error: {exc}", file=sys.stderr)
            ok = False
    print(f"wrote {model} scene, views and rig files to {out}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def _stitched(rig, poses, spec):
    bevs, centers = {}, {}
    for name, setup in rig.items():
        try:
            bevs[name] = render_bev(setup.image, setup.intrinsics, poses[name], spec)
        except CalibrationError:
            continue
        centers[name] = poses[name].center
    return stitch(bevs, centers, spec), bevs


def cmd_calibrate(args) -> int:
    try:
        cfg = RigConfig.load(args.config)
        cfg = cfg.with_overrides(seed=args.seed, batch_size=args.batch_size, workers=args.workers)
        rig = cfg.load_rig()
        gt = None
        gt_path = cfg.ground_truth_path()
        if gt_path is not None:
            gt = RigConfig.load(gt_path).poses()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_FAIL

    out = Path(args.out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoImprovementWarning)
        result = calibrate_rig(rig, cfg.bev, cfg.schedule, cfg.seed, cfg.options())
    log.info("calibration took %.1f s", result.duration)

    trace_paths = {}
    for name, trace in result.traces.items():
        rel = f"traces/{name}.jsonl"
        (out / rel).write_text(trace.to_jsonl(), encoding="utf-8")
        trace_paths[name] = rel
    report = build_report(cfg, result, trace_paths, gt)
    (out / "report.json").write_text(dumps_report(report), encoding="utf-8")
    cfg.save(out / "config.effective.json")

    spec = cfg.bev
    before, bevs_before = _stitched(rig, cfg.poses(), spec)
    after, bevs_after = _stitched(rig, result.poses, spec)
    save_gray(out / "bev_before.png", before)
    save_gray(out / "bev_after.png", after)
    if args.dump_bev:
        for tag, bevs in (("initial", bevs_before), ("refined", bevs_after)):
            for name, b in bevs.items():
                save_gray(out / "bev" / f"{name}_{tag}.png", b.intensities)
                save_mask(out / "bev" / f"{name}_{tag}_mask.png", b.valid)
    if args.dump_texture:
        for (i, j), pts in result.texture.items():
            path = out / "texture" / f"{i}_{j}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "y", "intensity"])
                for (x, y), val in zip(pts.xy, pts.intensity):
                    w.writerow([int(x), int(y), repr(float(val))])
            base = bevs_after.get(i)
            overlay = base.intensities * 0.6 if base is not None else np.zeros((spec.height, spec.width))
            overlay[pts.xy[:, 1], pts.xy[:, 0]] = 255.0
            save_gray(out / "texture" / f"{i}_{j}_overlay.png", overlay)

    for name in NEIGHBOURS:
        cam = report["cameras"][name]
        if name in result.failures:
            print(f"{name:>5s}: FAILED ({result.failures[name]})")
        else:
            print(f"{name:>5s}: loss {cam['initial_loss']:.3f} -> {cam['final_loss']:.3f}")
    print(f"status {result.status}; report written to {out / 'report.json'}")
    return {"success": EXIT_OK, "partial": EXIT_PARTIAL}.get(result.status, EXIT_FAIL)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    try:
        estimated = load_report_poses(args.report)
        truth = RigConfig.load(args.gt).poses()
        table = harness.evaluate_mae(estimated, truth)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(format_table(table))
    out = Path(args.out) if args.out else Path(args.report).parent
    write_csv(out / "mae.csv", table)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surroundcalib", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic rig with ground truth")
    p.add_argument("--config", help="optional JSON with synth options")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--fisheye", action="store_true")
    p.add_argument("--perturb", choices=("reference", "random", "none"))
    p.add_argument("--rot-radius", type=float, help="degrees, for --perturb random")
    p.add_argument("--trans-radius", type=float, help="meters, for --perturb random")
    p.add_argument("--scale", type=float, help="image resolution scale factor")
    p.add_argument("--noise-sigma", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="refine left, right and rear extrinsics")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--dump-bev", action="store_true")
    p.add_argument("--dump-texture", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="per-axis errors of a report against ground truth")
    p.add_argument("--report", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="directory for mae.csv (default: next to the report)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
