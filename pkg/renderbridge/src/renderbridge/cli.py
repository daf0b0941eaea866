"""Command line front end: export a scene manifest, batch-render frames.

Exit codes: 0 success, 1 at least one frame failed to render, 2 bad
input or missing renderer.
"""

import argparse
import json
import sys

from layerlens.gcode import GCodeError, parse_gcode

from .manifest import ManifestError, export_manifest, save_manifest
from .render import RendererMissingError, build_and_render

EXIT_OK = 0
EXIT_FRAME = 1
EXIT_INPUT = 2


def _fail(msg):
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_INPUT


def cmd_export(args):
    try:
        gcode_text = open(args.gcode).read()
        calibration = json.load(open(args.calibration))
    except OSError as exc:
        return _fail(exc)
    except json.JSONDecodeError as exc:
        return _fail(f"calibration is not valid JSON: {exc}")

    params = {}
    if args.samples is not None:
        params["samples"] = args.samples
    if args.seed is not None:
        params["seed"] = args.seed
    if args.resolution is not None:
        try:
            w, h = (int(v) for v in args.resolution.lower().split("x"))
        except ValueError:
            return _fail("resolution must look like 1920x1080")
        params["resolution_px"] = (w, h)
    if args.ring_radius is not None:
        params["ring_radius_mm"] = args.ring_radius

    try:
        program = parse_gcode(gcode_text)
        manifest = export_manifest(program, calibration, params)
        save_manifest(manifest, args.out)
    except (GCodeError, ManifestError) as exc:
        return _fail(exc)
    print(f"wrote {args.out} ({len(manifest['layers'])} layers)")
    return EXIT_OK


def cmd_render(args):
    try:
        results = build_and_render(args.manifest, args.out_dir,
                                   frames=args.frames,
                                   renderer=args.renderer)
    except (OSError, ValueError, RendererMissingError) as exc:
        return _fail(exc)

    failed = 0
    for frame in sorted(results):
        status = results[frame]
        if status["ok"]:
            print(f"frame {frame}: {status['path']}")
        else:
            failed += 1
            print(f"frame {frame}: FAILED ({status['error']})",
                  file=sys.stderr)
    return EXIT_FRAME if failed else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="renderbridge",
        description="Export print jobs as scene manifests and batch-render "
                    "per-layer reference frames.")
    sub = parser.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("export", help="write a scene manifest")
    exp.add_argument("--gcode", required=True)
    exp.add_argument("--calibration", required=True,
                     help="calibration JSON with a camera block")
    exp.add_argument("--out", required=True)
    exp.add_argument("--samples", type=int)
    exp.add_argument("--seed", type=int)
    exp.add_argument("--resolution", help="render size, e.g. 1920x1080")
    exp.add_argument("--ring-radius", type=float, dest="ring_radius")
    exp.set_defaults(func=cmd_export)

    ren = sub.add_parser("render", help="render frames from a manifest")
    ren.add_argument("--manifest", required=True)
    ren.add_argument("--out-dir", required=True, dest="out_dir")
    ren.add_argument("--frames", type=int, nargs="+")
    ren.add_argument("--renderer", help="renderer executable override")
    ren.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
