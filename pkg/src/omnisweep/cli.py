"""Command-line interface: render synthetic data, calibrate, stitch and
run verification suites.

Exit codes: 0 ok, 1 verification failure, 2 bad input, 3 non-convergence.
All commands are deterministic under a fixed --seed and identical inputs,
for any worker count.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import image_io, synthetic, verify
from .calibration import (CalibrationProblem, CornerObservations,
                          DegenerateInputError, compare_models, optimize)
from .rig import RigConfig
from .sphere_sweep import DistanceCandidates
from .stitcher import StitchParams, psnr, stitch

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_BAD_INPUT = 2
EXIT_NO_CONVERGENCE = 3


def _load_config(path):
    if path is None:
        return {}
    with open(path) as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict):
        raise ValueError("--config must hold a JSON object")
    return cfg


def _opt(args, config, name, default):
    """CLI flag > config file entry > built-in default."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return config.get(name, default)


def cmd_init(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = _load_config(args.config)
    baseline = float(_opt(args, config, "baseline", 0.12))
    size = int(_opt(args, config, "size", 640))
    synthetic.default_scene().save(out / "scene.json")
    synthetic.default_rig_config(baseline, (size, size)).save(out / "rig.json")
    print(f"wrote {out / 'scene.json'} and {out / 'rig.json'}")
    return EXIT_OK


def cmd_render(args):
    config = _load_config(args.config)
    scene = synthetic.Scene.load(args.scene)
    rig = RigConfig.load(args.rig)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    size = int(_opt(args, config, "size", 640))
    seed = int(_opt(args, config, "seed", 0))
    images, dists = synthetic.render_rig_views(scene, rig, (size, size))
    for cid in sorted(images):
        image_io.write_png(out / f"cam_{cid}.png", images[cid])
        image_io.write_pfm(out / f"cam_{cid}_dist.pfm", dists[cid])
    pano, pano_dist = synthetic.render_equirect(
        scene, (0.0, 0.0, 0.0), (2 * size, size))
    image_io.write_png(out / "pano_gt.png", pano)
    image_io.write_pfm(out / "pano_gt_dist.pfm", pano_dist)
    n_boards = int(_opt(args, config, "corners", 0))
    if n_boards > 0:
        noise = float(_opt(args, config, "noise", 0.0))
        board = synthetic.board_grid()
        for k, cam in enumerate(rig.cameras):
            poses = synthetic.calibration_poses(n_boards, seed=seed + 7 * k)
            obs = synthetic.render_corners(board, cam.intrinsics, poses,
                                           noise_sigma=noise,
                                           seed=seed + 1000 + k,
                                           image_size=(size, size))
            obs.save(out / f"corners_cam{cam.camera_id}.json")
    print(f"rendered {len(images)} views into {out}")
    return EXIT_OK


def _print_table(rows, header):
    widths = [max(len(str(r[i])) for r in [header] + rows)
              for i in range(len(header))]
    line = "  ".join(str(h).ljust(w) for h, w in zip(header, widths))
    print(line)
    print("-" * len(line))
    for r in rows:
        print("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))


def cmd_calibrate(args):
    config = _load_config(args.config)
    model = _opt(args, config, "model", "tscm")
    huber = float(_opt(args, config, "huber_delta", 1.0))
    out_path = _opt(args, config, "out", None)
    rows = []
    report = {}
    any_nonconverged = False
    for k, path in enumerate(args.corners):
        obs = CornerObservations.load(path)
        label = Path(path).stem
        if args.compare:
            res_d, res_t = compare_models(obs, huber_delta=huber)
            rows.append((label, f"{res_d.mean_reprojection_error:.3f}",
                         f"{res_t.mean_reprojection_error:.3f}"))
            report[label] = {"dscm": res_d.to_dict(), "tscm": res_t.to_dict()}
            any_nonconverged |= not (res_d.converged and res_t.converged)
        else:
            problem = CalibrationProblem(observations=obs, model=model,
                                         huber_delta=huber)
            res = optimize(problem)
            rows.append((label, f"{res.mean_reprojection_error:.3f}"))
            report[label] = res.to_dict()
            any_nonconverged |= not res.converged
    if args.compare:
        avg_d = np.mean([float(r[1]) for r in rows])
        avg_t = np.mean([float(r[2]) for r in rows])
        rows.append(("Average", f"{avg_d:.3f}", f"{avg_t:.3f}"))
        _print_table(rows, ("Camera", "DSCM Error", "TSCM Error"))
    else:
        avg = np.mean([float(r[1]) for r in rows])
        rows.append(("Average", f"{avg:.3f}"))
        _print_table(rows, ("Camera", f"{model.upper()} Error"))
    if out_path:
        with open(out_path, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    return EXIT_NO_CONVERGENCE if any_nonconverged else EXIT_OK


def cmd_stitch(args):
    config = _load_config(args.config)
    rig = RigConfig.load(args.rig)
    if len(args.images) != len(rig.cameras):
        raise ValueError(f"expected {len(rig.cameras)} images "
                         f"(one per rig camera, in rig order)")
    images = {}
    for cam, path in zip(rig.cameras, args.images):
        img, _ = image_io.read_png(path)
        images[cam.camera_id] = img
    layers = int(_opt(args, config, "layers", 32))
    d_min = float(_opt(args, config, "d_min", 0.3))
    d_max = float(_opt(args, config, "d_max", 50.0))
    grid_w, grid_h = _parse_size(_opt(args, config, "grid", "512x256"))
    pano_w, pano_h = _parse_size(_opt(args, config, "pano", "2048x1024"))
    params = StitchParams(
        grid_size=(grid_w, grid_h), pano_size=(pano_w, pano_h),
        sigma_i=float(_opt(args, config, "sigma_i", 0.05)),
        n_levels=int(_opt(args, config, "levels", 3)),
        psi0_deg=float(_opt(args, config, "psi0", 60.0)),
        feather=float(_opt(args, config, "feather", 0.05)),
        workers=args.workers)
    cands = DistanceCandidates.inverse_depth(d_min, d_max, layers)
    result = stitch(images, rig, cands, params)
    image_io.write_png(args.out, result.panorama.pixels,
                       alpha=result.panorama.coverage_mask)
    if args.out_distance:
        image_io.write_distance_map(args.out_distance, result.fused)
    if args.timing:
        for stage, dt in result.timings.items():
            print(f"{stage:>18}: {dt * 1000.0:9.1f} ms")
    if args.gt:
        gt_img, _ = image_io.read_png(args.gt)
        if gt_img.shape[:2] != result.panorama.pixels.shape[:2]:
            raise ValueError("ground-truth panorama size mismatch")
        value = psnr(result.panorama.pixels, gt_img,
                     result.panorama.coverage_mask)
        print(f"PSNR vs ground truth: {value:.2f} dB")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_check(args):
    seed = args.seed if args.seed is not None else 0
    results = verify.run_suite(args.suite, seed=seed)
    failed = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {name}: {detail}")
        failed += 0 if ok else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def _parse_size(text):
    try:
        w, h = str(text).lower().split("x")
        return int(w), int(h)
    except Exception as e:
        raise ValueError(f"bad size {text!r}, expected WxH") from e


def build_parser():
    p = argparse.ArgumentParser(prog="omnisweep", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="deterministic seed (default 0)")
    common.add_argument("--workers", type=int, default=None,
                        help="worker threads (default $OMNISWEEP_WORKERS or 1)")
    common.add_argument("--config", default=None,
                        help="JSON file with default overrides")

    sp = sub.add_parser("init", parents=[common],
                        help="write the bundled scene and rig configs")
    sp.add_argument("out_dir")
    sp.add_argument("--baseline", type=float, default=None)
    sp.add_argument("--size", type=int, default=None)
    sp.set_defaults(fn=cmd_init)

    sp = sub.add_parser("render", parents=[common],
                        help="render a synthetic dataset")
    sp.add_argument("scene", help="scene JSON")
    sp.add_argument("rig", help="rig JSON")
    sp.add_argument("out_dir")
    sp.add_argument("--size", type=int, default=None,
                    help="camera image size (square, default 640)")
    sp.add_argument("--corners", type=int, default=None,
                    help="also write N calibration boards per camera")
    sp.add_argument("--noise", type=float, default=None,
                    help="corner noise sigma in pixels (default 0)")
    sp.set_defaults(fn=cmd_render)

    sp = sub.add_parser("calibrate", parents=[common],
                        help="calibrate from corner observations")
    sp.add_argument("corners", nargs="+", help="corner JSON file(s)")
    sp.add_argument("--model", choices=("dscm", "tscm"), default=None)
    sp.add_argument("--compare", action="store_true",
                    help="run both models and print the comparison table")
    sp.add_argument("--huber-delta", dest="huber_delta", type=float,
                    default=None)
    sp.add_argument("--out", default=None, help="write results JSON")
    sp.set_defaults(fn=cmd_calibrate)

    sp = sub.add_parser("stitch", parents=[common],
                        help="stitch fisheye images into a panorama")
    sp.add_argument("images", nargs="+", help="input images in rig order")
    sp.add_argument("rig", help="rig JSON")
    sp.add_argument("out", help="output panorama PNG")
    sp.add_argument("--layers", type=int, default=None)
    sp.add_argument("--d-min", dest="d_min", type=float, default=None)
    sp.add_argument("--d-max", dest="d_max", type=float, default=None)
    sp.add_argument("--grid", default=None, help="sweep grid WxH")
    sp.add_argument("--pano", default=None, help="panorama WxH")
    sp.add_argument("--sigma-i", dest="sigma_i", type=float, default=None)
    sp.add_argument("--levels", type=int, default=None)
    sp.add_argument("--psi0", type=float, default=None)
    sp.add_argument("--feather", type=float, default=None)
    sp.add_argument("--timing", action="store_true",
                    help="print per-stage timings")
    sp.add_argument("--out-distance", dest="out_distance", default=None,
                    help="also write the fused distance map (PFM)")
    sp.add_argument("--gt", default=None,
                    help="ground-truth panorama PNG; prints PSNR")
    sp.set_defaults(fn=cmd_stitch)

    sp = sub.add_parser("check", parents=[common],
                        help="run the verification suites")
    sp.add_argument("--suite", choices=("roundtrip", "sweep", "calib", "all"),
                    default="all")
    sp.set_defaults(fn=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DegenerateInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (FileNotFoundError, ValueError, KeyError,
            json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
