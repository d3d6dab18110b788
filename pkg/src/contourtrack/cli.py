"""Command-line entry point: precompute, synth, track, eval, landscape, debug-render."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config
from .errors import ConfigError, ContourTrackError, DataError, TrackingLost

log = logging.getLogger("contourtrack")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_LOST = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from exc
    return w, h


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file overriding tracker defaults")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads, 0 = all cores")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="contourtrack", description="Contour-energy 3D object tracking toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("precompute", parents=[common], help="bake the face-visibility sidecar")
    s.add_argument("--mesh", required=True)
    s.add_argument("--out", required=True, help="sidecar file to write")
    s.add_argument("--level", type=int, help="icosphere level (default from config)")
    s.add_argument("--resolution", type=int, help="raster resolution per view")

    s = sub.add_parser("synth", parents=[common], help="render a scripted synthetic sequence")
    s.add_argument("--mesh", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--script", default="xy:1", help="pattern[:speed], e.g. zoom:3")
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=_size, default=(640, 480))
    s.add_argument("--texture", choices=["flat", "checker", "noise"], default="noise")
    s.add_argument("--background", choices=["flat", "gradient", "noise"], default="noise")
    s.add_argument("--noise", type=float, default=0.0, help="additive pixel noise sigma")
    s.add_argument("--flash-period", type=int, default=0)

    s = sub.add_parser("track", parents=[common], help="track a frame sequence")
    s.add_argument("--mesh", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--frames", required=True, help="printf pattern, e.g. 'dir/frame_%%06d.png'")
    s.add_argument("--init-pose", required=True, help="pose CSV; its first row pairs with frame 0")
    s.add_argument("--out", required=True)
    s.add_argument("--diagnostics", help="per-frame CSV (default: <out stem>_diag.csv)")
    s.add_argument("--no-refine", action="store_true", help="keypoint tracking only")
    s.add_argument("--visibility", help="precomputed sidecar file")
    s.add_argument("--cache-dir", help="directory for cached visibility sidecars")

    s = sub.add_parser("eval", parents=[common], help="compare estimated poses to ground truth")
    s.add_argument("--mesh", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--est", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", help="write the success curve as CSV")
    s.add_argument("--samples", type=int, default=201)
    s.add_argument("--method", choices=["exact", "trapezoid"], default="exact")

    s = sub.add_parser("landscape", parents=[common], help="dump 1D energy slices around a pose")
    s.add_argument("--mesh", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--frame", required=True)
    s.add_argument("--pose", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--rot-range", type=float, default=10.0, help="degrees")
    s.add_argument("--trans-range", type=float, default=0.1, help="fraction of the model diameter")
    s.add_argument("--steps", type=int, default=41)
    s.add_argument("--blur", type=float, default=0.0, help="Gaussian sigma applied first")

    s = sub.add_parser("debug-render", parents=[common], help="render a pose with its contour overlay")
    s.add_argument("--mesh", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--pose", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--frame", help="draw onto this image instead of a synthetic render")
    s.add_argument("--size", type=_size, default=(640, 480))
    return p


def _config(args) -> Config:
    cfg = Config.load(args.config) if args.config else Config()
    if args.seed is not None:
        cfg = cfg.updated(seed=args.seed)
    return cfg


def _threads(n: int) -> int:
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


def _first_pose(path):
    from .io import read_poses

    poses = read_poses(path)
    return poses[min(poses)]


def cmd_precompute(args, cfg: Config) -> int:
    from .io import load_obj
    from .visibility import bake_visibility, build_icosphere, save_visibility

    mesh = load_obj(args.mesh)
    ico = build_icosphere(args.level if args.level is not None else cfg.icosphere_level)
    vmap = bake_visibility(mesh, ico, args.resolution or cfg.visibility_resolution, _threads(args.threads))
    save_visibility(vmap, args.out)
    log.info("wrote %s (%d directions)", args.out, len(ico.vertices))
    return EXIT_OK


def cmd_synth(args, cfg: Config) -> int:
    from .io import load_camera, load_obj
    from .synth import Appearance, MotionScript, generate_sequence, write_sequence

    mesh = load_obj(args.mesh)
    k = load_camera(args.camera)
    try:
        script = MotionScript.parse(args.script, frames=args.frames)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    app = Appearance(texture=args.texture, background=args.background, noise_sigma=args.noise,
                     flash_period=args.flash_period, seed=cfg.seed)
    frames, poses = generate_sequence(mesh, k, script, app, cfg.seed, args.size)
    write_sequence(args.out, frames, poses, k)
    return EXIT_OK


def cmd_track(args, cfg: Config) -> int:
    from .io import frame_paths, load_camera, load_image, load_obj, write_poses
    from .tracker import Tracker, write_diagnostics
    from .visibility import build_icosphere, load_visibility

    mesh = load_obj(args.mesh)
    k = load_camera(args.camera)
    paths = frame_paths(args.frames)
    if not paths:
        raise DataError(f"no frames match {args.frames}")
    init = _first_pose(args.init_pose)
    if args.no_refine:
        cfg = cfg.updated(refine=False)
    ico = vmap = None
    if args.visibility:
        ico = build_icosphere(cfg.icosphere_level)
        vmap = load_visibility(args.visibility, mesh.n_faces)
        if vmap.level != ico.level:
            raise DataError(f"{args.visibility}: level {vmap.level} does not match config {ico.level}")
    tracker = Tracker(mesh, k, cfg, ico, vmap, args.cache_dir, _threads(args.threads))
    out = Path(args.out)
    diag = Path(args.diagnostics) if args.diagnostics else out.with_name(out.stem + "_diag.csv")
    tracker.initialize(load_image(paths[0]), init)
    try:
        for p in paths[1:]:
            tracker.track_frame(load_image(p))
    finally:
        write_poses(out, tracker.state.poses)
        write_diagnostics(diag, tracker.state.reports)
    return EXIT_OK


def cmd_eval(args, cfg: Config) -> int:
    from .evaluation import evaluate_sequences
    from .geometry import model_diameter
    from .io import load_obj, read_poses

    mesh = load_obj(args.mesh)
    report = evaluate_sequences(read_poses(args.gt), read_poses(args.est), mesh, model_diameter(mesh),
                                args.samples, args.method)
    report.write_json(args.out)
    if args.plot:
        report.write_curve(args.plot)
    print(f"auc {report.auc:.4f}")
    return EXIT_OK


def cmd_landscape(args, cfg: Config) -> int:
    from .energy import EnergyContext
    from .image import gaussian_blur
    from .io import load_camera, load_image, load_obj
    from .visibility import build_icosphere, load_or_bake

    mesh = load_obj(args.mesh)
    k = load_camera(args.camera)
    img = load_image(args.frame)
    if args.blur > 0:
        img = gaussian_blur(img, args.blur)
    pose = _first_pose(args.pose)
    ico = build_icosphere(cfg.icosphere_level)
    vmap = load_or_bake(mesh, ico, cfg.visibility_resolution, threads=_threads(args.threads))
    ctx = EnergyContext.from_image(img, mesh, k, pose, ico=ico, vmap=vmap, **cfg.energy_kwargs())
    names = ["rx", "ry", "rz", "tx", "ty", "tz"]
    spans = [math.radians(args.rot_range)] * 3 + [args.trans_range * ctx.diameter] * 3
    lines = ["axis,offset,energy,samples"]
    for i, name in enumerate(names):
        for off in np.linspace(-spans[i], spans[i], args.steps):
            x = np.zeros(6)
            x[i] = off
            e, n = ctx.evaluate(x)
            lines.append(f"{name},{float(off)!r},{float(e)!r},{n}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    return EXIT_OK


OVERLAY_COLORS = {1: (160, 32, 240), 2: (0, 255, 255)}  # contour purple, sharp cyan
SAMPLE_COLOR = (255, 255, 255)


def cmd_debug_render(args, cfg: Config) -> int:
    from PIL import Image, ImageDraw

    from .contour import detect_contours, sample_contour
    from .errors import AllSamplesClipped
    from .geometry import project_points
    from .io import load_camera, load_image, load_obj
    from .synth import Appearance, render_frame
    from .visibility import build_icosphere, invisible_mask_for_pose, load_or_bake

    mesh = load_obj(args.mesh)
    k = load_camera(args.camera)
    pose = _first_pose(args.pose)
    if args.frame:
        img = load_image(args.frame)
    else:
        img = render_frame(mesh, pose, k, Appearance(seed=cfg.seed), args.size)
    ico = build_icosphere(cfg.icosphere_level)
    vmap = load_or_bake(mesh, ico, cfg.visibility_resolution, threads=_threads(args.threads))
    segs = detect_contours(mesh, pose, invisible_mask_for_pose(pose, ico, vmap), cfg.theta_sharp,
                           cfg.boundary_edges)
    gray = np.clip(np.rint(img.data * 255.0 * 0.6), 0, 255).astype(np.uint8)
    canvas = Image.fromarray(np.repeat(gray[..., None], 3, axis=2))
    draw = ImageDraw.Draw(canvas)
    for a, b, kind in zip(segs.starts, segs.ends, segs.kinds):
        if a[2] <= 0 or b[2] <= 0:
            continue
        pa, pb = project_points(k, np.array([a, b]))
        draw.line([tuple(pa), tuple(pb)], fill=OVERLAY_COLORS.get(int(kind), SAMPLE_COLOR), width=1)
    try:
        pts = sample_contour(segs, k, cfg.spacing, (img.width, img.height)).points
        for x, y in np.rint(pts).astype(int):
            draw.point((int(x), int(y)), fill=SAMPLE_COLOR)
    except AllSamplesClipped:
        log.warning("no contour samples inside the image")
    canvas.save(args.out)
    return EXIT_OK


COMMANDS = {
    "precompute": cmd_precompute,
    "synth": cmd_synth,
    "track": cmd_track,
    "eval": cmd_eval,
    "landscape": cmd_landscape,
    "debug-render": cmd_debug_render,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrackingLost as exc:
        print(f"tracking lost: {exc}", file=sys.stderr)
        return EXIT_LOST
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContourTrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
