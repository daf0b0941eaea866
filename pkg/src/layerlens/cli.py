"""Command-line surface: calibrate, render-ref, analyze, compare-metrics, watch.

Exit codes are a stable contract: 0 success, 2 bad input or configuration,
3 anomaly alarm.  Every artifact is written atomically so a folder watcher
never sees a half-written file.
"""

import argparse
import csv
import io
import json
import os
import re
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .detect import DEFAULT_THRESHOLD, analyze_layer, report_to_dict
from .gcode import GCodeError, parse_gcode
from .geometry import (
    ActivePlane,
    CameraModel,
    GeometryError,
    Homography,
    active_plane_homography,
    detect_markers,
    estimate_homography,
    top_view_corners,
    warp_image,
    warp_points,
)
from .hog import HogConfig, HogError
from .rasterref import (
    LayerImage,
    RasterError,
    load_image_png,
    load_mask_png,
    rasterize_stack,
    save_image_png,
    save_mask_png,
    stack_mask,
)
from .similarity import METRIC_KINDS, Metric, SimilarityError
from .util import atomic_write_json, atomic_write_text
from .viz import save_heatmap_png, save_overlay_png, save_power_chart

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ALARM = 3

_SNAPSHOT_RE = re.compile(r"^layer_(\d+)\.png$")


class ConfigError(ValueError):
    pass


@dataclass
class JobConfig:
    gcode_path: str | None = None
    calibration_path: str | None = None
    output_dir: str = "layerlens_out"
    scale_px_per_mm: float = 6.67
    half_extent_mm: float = 45.0
    hog: HogConfig = field(default_factory=HogConfig)
    metrics: list = field(default_factory=lambda: ["cosine"])
    threshold: float = DEFAULT_THRESHOLD
    min_region_blocks: int = 1
    closing_radius_mm: float = 0.5
    alarm_ratio_pct: float = 5.0
    background: int = 30
    poll_interval_s: float = 1.0

    def __post_init__(self):
        if self.scale_px_per_mm <= 0:
            raise ConfigError("scale_px_per_mm must be positive")
        if self.half_extent_mm <= 0:
            raise ConfigError("half_extent_mm must be positive")
        if not self.metrics:
            raise ConfigError("at least one metric must be configured")
        for token in self.metrics:
            if token not in METRIC_KINDS:
                raise ConfigError(f"unknown metric {token!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie strictly between 0 and 1")
        if self.min_region_blocks < 1:
            raise ConfigError("min_region_blocks must be >= 1")
        if self.alarm_ratio_pct < 0:
            raise ConfigError("alarm_ratio_pct must be >= 0")
        if self.poll_interval_s <= 0:
            raise ConfigError("poll_interval_s must be positive")


def load_config(path=None, overrides=None):
    """Config file, then LAYERLENS_OUTPUT, then explicit flag overrides."""
    data = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                data = json.load(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
    hog_data = data.pop("hog", {})
    known = set(JobConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        hog = HogConfig(**hog_data)
    except (TypeError, HogError) as exc:
        raise ConfigError(f"bad hog section: {exc}") from exc
    try:
        cfg = JobConfig(hog=hog, **data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc

    env_out = os.environ.get("LAYERLENS_OUTPUT")
    if env_out:
        cfg = replace(cfg, output_dir=env_out)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg = replace(cfg, **{key: value})
    return cfg


def _reference_paths(out_dir, index):
    base = Path(out_dir) / "reference"
    return (base / f"ref_{index:04d}.png",
            base / f"mask_{index:04d}.png",
            base / f"ref_{index:04d}.json")


def _frame(cfg):
    side = int(round(2.0 * cfg.half_extent_mm * cfg.scale_px_per_mm))
    origin = (-cfg.half_extent_mm, -cfg.half_extent_mm)
    return origin, (side, side)


# ---------------------------------------------------------------- calibrate

def _parse_window(text):
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 4:
        raise ConfigError(f"window needs x0,y0,x1,y1 (got {text!r})")
    return tuple(parts)


def cmd_calibrate(args, cfg):
    try:
        img = load_image_png(args.image, scale=1.0)
    except OSError as exc:
        print(f"cannot read image: {exc}", file=sys.stderr)
        return EXIT_INPUT
    windows = [_parse_window(w) for w in args.window]
    try:
        markers = detect_markers(img, windows, args.marker_threshold)
        corners = top_view_corners(cfg.half_extent_mm, cfg.scale_px_per_mm)
        H = estimate_homography(markers, corners)
    except GeometryError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_INPUT
    mapped = warp_points(H, markers)
    residual = float(np.sqrt(np.mean(np.sum((mapped - corners) ** 2, axis=1))))
    payload = {
        "scale_px_per_mm": cfg.scale_px_per_mm,
        "half_extent_mm": cfg.half_extent_mm,
        "homography": H.to_list(),
        "markers": [[float(x), float(y)] for x, y in markers],
        "residual_px": residual,
        "image_dims": [img.pixels.shape[1], img.pixels.shape[0]],
    }
    atomic_write_json(args.out, payload)
    print(f"calibration written to {args.out} (rms corner residual "
          f"{residual:.6f} px)")
    return EXIT_OK


# --------------------------------------------------------------- render-ref

def cmd_render_ref(args, cfg):
    gcode_path = args.gcode or cfg.gcode_path
    if not gcode_path:
        print("no G-code path given (flag or config)", file=sys.stderr)
        return EXIT_INPUT
    try:
        with open(gcode_path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        print(f"cannot read G-code: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        program = parse_gcode(text)
    except GCodeError as exc:
        print(f"G-code error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    origin, dims = _frame(cfg)
    out_base = Path(args.out_dir or cfg.output_dir)
    (out_base / "reference").mkdir(parents=True, exist_ok=True)
    for layer in program.layers:
        stack = program.layers[: layer.index + 1]
        img = rasterize_stack(stack, cfg.scale_px_per_mm, cfg.background,
                              origin=origin, dims=dims)
        mask = stack_mask(stack, cfg.scale_px_per_mm, cfg.closing_radius_mm,
                          origin=origin, dims=dims)
        ref_png, mask_png, sidecar = _reference_paths(out_base, layer.index)
        save_image_png(img, ref_png)
        save_mask_png(mask, mask_png)
        atomic_write_json(sidecar, {
            "layer": layer.index,
            "z": layer.z,
            "scale_px_per_mm": cfg.scale_px_per_mm,
            "origin": list(origin),
            "dims": list(dims),
            "layer_height": program.layer_height,
        })
    print(f"wrote {len(program.layers)} reference layers to "
          f"{out_base / 'reference'}")
    return EXIT_OK


# ------------------------------------------------------------------ analyze

def _load_calibration(cfg):
    """None means inputs are already in the reference frame."""
    if not cfg.calibration_path:
        return None
    try:
        with open(cfg.calibration_path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read calibration: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"calibration is not valid JSON: {exc}") from exc


def _unwarp(pixels, calib, z, cfg, origin, dims):
    src = LayerImage(pixels=pixels, scale=cfg.scale_px_per_mm, origin=origin)
    if calib is None:
        if pixels.shape != (dims[1], dims[0]):
            raise ConfigError(
                "no calibration configured and captured image dims do not "
                "match the reference frame")
        return src
    if "camera" in calib:
        cam = CameraModel.from_dict(calib["camera"])
        plane = ActivePlane(z=z, half_extent=calib.get(
            "half_extent_mm", cfg.half_extent_mm))
        H = active_plane_homography(cam, plane, cfg.scale_px_per_mm)
    else:
        H = Homography.from_list(calib["homography"])
    return warp_image(src, H, dims, out_scale=cfg.scale_px_per_mm,
                      out_origin=origin)


def _analyze_snapshot(image_path, index, cfg, calib, out_base):
    """Shared core of analyze and watch; returns (alarm, summary dict)."""
    ref_png, mask_png, sidecar = _reference_paths(out_base, index)
    for path in (ref_png, mask_png, sidecar):
        if not Path(path).exists():
            raise ConfigError(f"missing reference artifact {path} "
                              f"(run render-ref first)")
    with open(sidecar, "r", encoding="utf-8") as handle:
        meta = json.load(handle)
    origin = tuple(meta["origin"])
    dims = tuple(meta["dims"])
    scale = meta["scale_px_per_mm"]
    ref_img = load_image_png(ref_png, scale, origin)
    mask = load_mask_png(mask_png, scale, origin)
    try:
        raw = load_image_png(image_path, scale, origin)
    except OSError as exc:
        raise ConfigError(f"cannot read snapshot {image_path}: {exc}") from exc
    real = _unwarp(raw.pixels, calib, meta["z"], cfg, origin, dims)

    analysis_dir = Path(out_base) / "analysis"
    analysis_dir.mkdir(parents=True, exist_ok=True)
    summary = {"layer": index, "alarm": False, "metrics": {}}
    for token in cfg.metrics:
        report = analyze_layer(real, ref_img, mask, cfg.hog, Metric(token),
                               threshold=cfg.threshold,
                               min_blocks=cfg.min_region_blocks,
                               layer_index=index)
        stem = f"layer_{index:04d}_{token}"
        heatmap = analysis_dir / f"{stem}_heatmap.png"
        save_heatmap_png(report.map, heatmap)
        save_overlay_png(real, report, analysis_dir / f"{stem}_overlay.png")
        atomic_write_json(analysis_dir / f"{stem}.json",
                          report_to_dict(report, map_png=str(heatmap)))
        summary["metrics"][token] = report.anomaly_ratio_pct
        if report.anomaly_ratio_pct > cfg.alarm_ratio_pct:
            summary["alarm"] = True
    atomic_write_json(analysis_dir / f"layer_{index:04d}_summary.json", summary)
    return summary["alarm"], summary


def cmd_analyze(args, cfg):
    out_base = Path(cfg.output_dir)
    try:
        calib = _load_calibration(cfg)
        alarm, summary = _analyze_snapshot(args.image, args.layer, cfg,
                                           calib, out_base)
    except (ConfigError, GeometryError, RasterError, SimilarityError,
            ValueError) as exc:
        print(f"analyze failed: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for token, pct in summary["metrics"].items():
        print(f"layer {args.layer} {token}: anomalous area {pct:.2f}%")
    if alarm:
        print(f"ALARM: anomalous area exceeds {cfg.alarm_ratio_pct}%",
              file=sys.stderr)
        return EXIT_ALARM
    return EXIT_OK


# ----------------------------------------------------------- compare-metrics

def _sibling_paths(reference):
    ref = Path(reference)
    mask = ref.with_name(ref.name.replace("ref_", "mask_", 1))
    sidecar = ref.with_suffix(".json")
    return mask, sidecar


def _ratio_for(image_path, ref_img, mask, cfg, token):
    raw = load_image_png(image_path, ref_img.scale, ref_img.origin)
    real = LayerImage(pixels=raw.pixels, scale=ref_img.scale,
                      origin=ref_img.origin)
    report = analyze_layer(real, ref_img, mask, cfg.hog, Metric(token),
                           threshold=cfg.threshold,
                           min_blocks=cfg.min_region_blocks)
    return report.anomaly_ratio_pct


def cmd_compare_metrics(args, cfg):
    try:
        with open(args.manifest, "r", encoding="utf-8") as handle:
            entries = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if not isinstance(entries, list):
        print("manifest must be a JSON list", file=sys.stderr)
        return EXIT_INPUT

    out_base = Path(cfg.output_dir)
    out_base.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = 0
    for entry in entries:
        case = entry.get("case", "unnamed")
        try:
            mask_path, sidecar = _sibling_paths(entry["reference"])
            with open(sidecar, "r", encoding="utf-8") as handle:
                meta = json.load(handle)
            origin = tuple(meta["origin"])
            scale = meta["scale_px_per_mm"]
            ref_img = load_image_png(entry["reference"], scale, origin)
            mask = load_mask_png(mask_path, scale, origin)
            for token in cfg.metrics:
                regular = _ratio_for(entry["regular"], ref_img, mask, cfg, token)
                failed = _ratio_for(entry["failed"], ref_img, mask, cfg, token)
                rows.append((case, token, regular, failed, failed - regular))
        except (KeyError, OSError, ValueError) as exc:
            failures += 1
            print(f"case {case!r} skipped: {exc}", file=sys.stderr)
            continue

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["case", "metric", "regular_pct", "failed_pct", "power"])
    for case, token, regular, failed, power in rows:
        writer.writerow([case, token, f"{regular:.2f}", f"{failed:.2f}",
                         f"{power:.2f}"])
    csv_path = out_base / "metric_comparison.csv"
    atomic_write_text(csv_path, buf.getvalue())
    if rows:
        save_power_chart(rows, out_base / "metric_comparison.png")
    print(f"wrote {len(rows)} comparison rows to {csv_path}"
          + (f" ({failures} cases skipped)" if failures else ""))
    return EXIT_OK


# -------------------------------------------------------------------- watch

def cmd_watch(args, cfg):
    snap_dir = Path(args.dir)
    if not snap_dir.is_dir():
        print(f"snapshot directory {snap_dir} does not exist", file=sys.stderr)
        return EXIT_INPUT
    try:
        calib = _load_calibration(cfg)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT

    out_base = Path(cfg.output_dir)
    out_base.mkdir(parents=True, exist_ok=True)
    log_path = out_base / "job_log.jsonl"
    marker_path = out_base / "PAUSE_REQUESTED"
    processed = set()
    polls = 0
    while args.max_polls is None or polls < args.max_polls:
        polls += 1
        pending = []
        for name in os.listdir(snap_dir):
            match = _SNAPSHOT_RE.match(name)
            if match:
                index = int(match.group(1))
                if index not in processed:
                    pending.append((index, name))
        for index, name in sorted(pending):
            processed.add(index)
            record = {"ts": time.time(), "layer": index, "file": name}
            try:
                alarm, summary = _analyze_snapshot(
                    snap_dir / name, index, cfg, calib, out_base)
                record["alarm"] = alarm
                record["metrics"] = summary["metrics"]
            except (ConfigError, ValueError) as exc:
                record["error"] = str(exc)
                alarm = False
            with open(log_path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
                handle.flush()
            if alarm:
                atomic_write_text(
                    marker_path,
                    f"layer {index} exceeded {cfg.alarm_ratio_pct}% at "
                    f"{time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
                print(f"pause requested after layer {index}", file=sys.stderr)
        if args.max_polls is None or polls < args.max_polls:
            time.sleep(cfg.poll_interval_s)
    return EXIT_OK


# --------------------------------------------------------------------- main

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="layerlens",
        description="Layer-wise print monitoring from G-code references")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON job config")
    common.add_argument("--metric", action="append", dest="metrics",
                        metavar="KIND", help="override configured metrics")
    common.add_argument("--threshold", type=float,
                        help="similarity failure threshold")
    common.add_argument("--scale", type=float, dest="scale_px_per_mm",
                        help="pixels per millimetre")

    cal = sub.add_parser("calibrate", parents=[common],
                         help="fit the build-plate homography from markers")
    cal.add_argument("--image", required=True)
    cal.add_argument("--window", action="append", required=True,
                     metavar="X0,Y0,X1,Y1",
                     help="marker search window (give four)")
    cal.add_argument("--marker-threshold", type=float, default=200.0)
    cal.add_argument("--out", required=True)
    cal.set_defaults(func=cmd_calibrate)

    ren = sub.add_parser("render-ref", parents=[common],
                         help="render per-layer reference images from G-code")
    ren.add_argument("--gcode")
    ren.add_argument("--out-dir")
    ren.set_defaults(func=cmd_render_ref)

    ana = sub.add_parser("analyze", parents=[common],
                         help="compare one captured layer against its reference")
    ana.add_argument("--image", required=True)
    ana.add_argument("--layer", type=int, required=True)
    ana.set_defaults(func=cmd_analyze)

    cmp_ = sub.add_parser("compare-metrics", parents=[common],
                          help="tabulate metric discriminative power")
    cmp_.add_argument("--manifest", required=True)
    cmp_.set_defaults(func=cmd_compare_metrics)

    wat = sub.add_parser("watch", parents=[common],
                         help="poll a folder for layer snapshots")
    wat.add_argument("--dir", required=True)
    wat.add_argument("--max-polls", type=int, default=None,
                     help="stop after this many polls (default: run forever)")
    wat.set_defaults(func=cmd_watch)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    overrides = {
        "metrics": getattr(args, "metrics", None),
        "threshold": getattr(args, "threshold", None),
        "scale_px_per_mm": getattr(args, "scale_px_per_mm", None),
    }
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
