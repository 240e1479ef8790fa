"""Command-line entry point: `python -m src.cli <subcommand> ...`.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from .bopio import (
    format_report_json,
    load_assets,
    load_mesh,
    load_symmetries,
    read_results,
    read_scene_gt,
    read_scene_gt_poses,
    write_report,
)
from .config import configure_logging, get_settings
from .correlation import run_benchmark
from .errors import InvalidParam, PoseKitError
from .geometry import Pose, Rotation, bbox_from_pose, site_encode
from .metrics import ALL_METRICS, average_recall, build_records
from .models import CameraIntrinsics
from .render import rasterize, write_depth_png
from .so3grid import format_grid, nearest_neighbor_angles, so3_prototypes, write_grid
from .symlabels import hard_label, object_diameter, rotation_soft_labels, translation_soft_labels

logger = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-6


class CliParser(argparse.ArgumentParser):
    """Usage errors print the synopsis to stderr and exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


# argparse types; a failure here is a usage error

def existing_file(value: str) -> Path:
    path = Path(value)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"file not found: {value}")
    return path


def existing_dir(value: str) -> Path:
    path = Path(value)
    if not path.is_dir():
        raise argparse.ArgumentTypeError(f"directory not found: {value}")
    return path


def output_path(value: str) -> Path:
    path = Path(value)
    if not path.parent.is_dir():
        raise argparse.ArgumentTypeError(f"output directory does not exist: {path.parent}")
    return path


def positive_int(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value}")
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def positive_float(value: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value}")
    if not x > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return x


def _numbers(value: str, n: int, what: str) -> List[float]:
    try:
        values = [float(v) for v in value.split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must be {n} numbers")
    if len(values) != n or not np.all(np.isfinite(values)):
        raise argparse.ArgumentTypeError(f"{what} must be {n} finite numbers, got '{value}'")
    return values


def pose_arg(value: str) -> Pose:
    """Pose given as "qw qx qy qz tx ty tz" with a unit quaternion."""
    v = _numbers(value, 7, "pose")
    norm = float(np.linalg.norm(v[:4]))
    if abs(norm - 1.0) > UNIT_NORM_TOL:
        raise argparse.ArgumentTypeError(f"quaternion norm is {norm:.9f}, expected 1")
    return Pose(Rotation(v[:4]), v[4:])


def cam_arg(value: str) -> List[float]:
    fx, fy, cx, cy = _numbers(value, 4, "camera")
    if fx <= 0 or fy <= 0:
        raise argparse.ArgumentTypeError("focal lengths must be positive")
    return [fx, fy, cx, cy]


def size_arg(value: str) -> tuple:
    try:
        w, h = (int(v) for v in value.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like WxH, got '{value}'")
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def shape_arg(value: str) -> tuple:
    try:
        d, h, w = (int(v) for v in value.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like dxHxW, got '{value}'")
    if min(d, h, w) < 1:
        raise argparse.ArgumentTypeError("shape must be positive")
    return d, h, w


def metrics_arg(value: str) -> tuple:
    names = tuple(m.strip() for m in value.split(",") if m.strip())
    unknown = [m for m in names if m not in ALL_METRICS]
    if not names or unknown:
        raise argparse.ArgumentTypeError(f"metrics must be a comma list of {','.join(ALL_METRICS)}")
    return names


def build_parser() -> CliParser:
    settings = get_settings()
    parser = CliParser(prog="posekit", description="Deterministic substrate of a two-stage 6-DoF pose pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("gridgen", help="export the SO(3) prototype grid")
    p.add_argument("--n-side", type=positive_int, required=True, help="HEALPix resolution (K = m1 * 12 * n_side^2)")
    p.add_argument("--out", type=output_path, help="output file (default: stdout)")

    p = sub.add_parser("labels", help="rotation (and translation) soft labels per object instance")
    p.add_argument("--gt", type=existing_file, required=True, help="scene_gt.json")
    p.add_argument("--mesh", type=existing_file, required=True, help="object mesh (PLY or OBJ)")
    p.add_argument("--symm", type=existing_file, required=True, help="symmetry JSON")
    p.add_argument("--n-side", type=positive_int, required=True, help="SO(3) grid resolution")
    p.add_argument("--sigma-frac", type=positive_float, default=settings.sigma_frac,
                   help=f"label sigma as a fraction of the object diameter (default {settings.sigma_frac})")
    p.add_argument("--obj-id", type=int, help="label only this object id")
    p.add_argument("--camera", type=existing_file, help="scene_camera.json; adds translation labels")
    p.add_argument("--out", type=output_path, help="output JSON (default: stdout)")

    p = sub.add_parser("eval", help="BOP average recall of a results file")
    p.add_argument("--results", type=existing_file, required=True, help="results CSV")
    p.add_argument("--gt", type=existing_file, required=True, help="scene_gt.json")
    p.add_argument("--camera", type=existing_file, required=True, help="scene_camera.json")
    p.add_argument("--models", type=existing_dir, required=True, help="directory of obj_XXXXXX.ply (+ models_info.json)")
    p.add_argument("--metrics", type=metrics_arg, default=ALL_METRICS, help=f"comma list (default {','.join(ALL_METRICS)})")
    p.add_argument("--jobs", type=positive_int, help="worker threads (default POSEKIT_JOBS or logical cores)")
    p.add_argument("--scene-id", type=int, help="scene id of the ground truth (default: the only one in results)")
    p.add_argument("--out", type=output_path, help="report JSON; a .csv mirror is written next to it (default: stdout)")

    p = sub.add_parser("render", help="16-bit depth PNG of a mesh under a pose")
    p.add_argument("--mesh", type=existing_file, required=True, help="object mesh (PLY or OBJ)")
    p.add_argument("--pose", type=pose_arg, required=True, help='"qw qx qy qz tx ty tz" (mm)')
    p.add_argument("--cam", type=cam_arg, required=True, help='"fx fy cx cy"')
    p.add_argument("--size", type=size_arg, required=True, help="WxH")
    p.add_argument("--out", type=output_path, required=True, help="output PNG (0.1 mm per unit)")

    p = sub.add_parser("corrbench", help="benchmark the correlation kernels")
    p.add_argument("--shape", type=shape_arg, required=True, help="dxHxW")
    p.add_argument("--window", type=positive_int, required=True, help="odd window side")
    p.add_argument("--impl", choices=["all", "naive", "shifted", "windowed"], default="all")
    p.add_argument("--repeat", type=positive_int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=output_path, help="output CSV (default: stdout)")
    return parser


def _emit(text: str, out: Optional[Path]):
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
        logger.info(f"Wrote {out}")


def cmd_gridgen(args) -> int:
    grid = so3_prototypes(args.n_side)
    angles = np.degrees(nearest_neighbor_angles(grid))
    logger.info(f"SO(3) grid n_side={args.n_side}: K={grid.K}, median neighbour angle {np.median(angles):.2f} deg")
    if args.out is None:
        sys.stdout.write(format_grid(grid))
    else:
        write_grid(grid, args.out)
    return 0


def cmd_labels(args) -> int:
    settings = get_settings()
    mesh = load_mesh(args.mesh)
    sym = load_symmetries(args.symm)
    poses = read_scene_gt_poses(args.gt)
    if args.obj_id is not None:
        poses = [p for p in poses if p.obj_id == args.obj_id]
    else:
        obj_ids = sorted({p.obj_id for p in poses})
        if len(obj_ids) > 1:
            raise InvalidParam(f"scene holds objects {obj_ids}; choose one with --obj-id")
    cameras = {inst.im_id: inst.camera for inst in read_scene_gt(args.gt, args.camera)} if args.camera else {}

    grid = so3_prototypes(args.n_side)
    diameter = object_diameter(mesh)
    sigma = args.sigma_frac * diameter
    instances = []
    for gt in poses:
        labels = rotation_soft_labels(gt.pose, grid, mesh, sym, sigma, max_vertices=settings.max_vertices)
        entry = {
            "im_id": gt.im_id,
            "obj_id": gt.obj_id,
            "rotation_hard": hard_label(labels),
            "rotation": labels.values.tolist(),
        }
        if gt.im_id in cameras:
            bbox = bbox_from_pose(mesh.vertices, gt.pose, cameras[gt.im_id], settings.bbox_padding, settings.crop_size)
            site = site_encode(gt.pose.translation, bbox, cameras[gt.im_id])
            tlabels = translation_soft_labels(site, settings.xy_range, settings.z_range)
            xy_hard, z_hard = hard_label(tlabels)
            entry["translation"] = {
                "site": site.as_array().tolist(),
                "xy_hard": xy_hard,
                "z_hard": z_hard,
                "xy": tlabels.xy.tolist(),
                "z": tlabels.z.tolist(),
            }
        instances.append(entry)
    logger.info(f"Labelled {len(instances)} instances over K={grid.K} buckets (sigma={sigma:.3f} mm)")
    doc = {
        "n_side": args.n_side,
        "K": grid.K,
        "sigma_frac": args.sigma_frac,
        "diameter": diameter,
        "sigma": sigma,
        "instances": instances,
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0


def cmd_eval(args) -> int:
    rows = read_results(args.results)
    gts = read_scene_gt(args.gt, args.camera)
    scene_id = args.scene_id
    if scene_id is None:
        scene_ids = sorted({r.scene_id for r in rows})
        if len(scene_ids) != 1:
            raise InvalidParam(f"results hold scene ids {scene_ids}; pass --scene-id")
        scene_id = scene_ids[0]
    assets = load_assets(args.models, [g.obj_id for g in gts])
    records = build_records(scene_id, rows, gts, assets)
    report = average_recall(records, args.metrics, args.jobs)
    if args.out is None:
        sys.stdout.write(format_report_json(report))
    else:
        write_report(report, args.out, args.out.with_suffix(".csv"))
    return 0


def cmd_render(args) -> int:
    fx, fy, cx, cy = args.cam
    width, height = args.size
    cam = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
    depth, mask = rasterize(load_mesh(args.mesh), args.pose, cam)
    logger.info(f"Rendered {int(mask.sum())} object pixels")
    write_depth_png(depth, args.out)
    return 0


def cmd_corrbench(args) -> int:
    d, h, w = args.shape
    impls = ("naive", "shifted", "windowed") if args.impl == "all" else (args.impl,)
    df = run_benchmark(d, h, w, args.window, impls, args.repeat, args.seed)
    _emit(df.to_csv(index=False, lineterminator="\n"), args.out)
    return 0


COMMANDS = {
    "gridgen": cmd_gridgen,
    "labels": cmd_labels,
    "eval": cmd_eval,
    "render": cmd_render,
    "corrbench": cmd_corrbench,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging()
    try:
        return COMMANDS[args.command](args)
    except (PoseKitError, OSError, ValidationError) as e:
        logger.debug("Command failed", exc_info=True)
        sys.stderr.write(f"posekit {args.command}: error: {e}\n")
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
