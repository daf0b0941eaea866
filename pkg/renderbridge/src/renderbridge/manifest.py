"""Scene manifest construction and validation.

The manifest is plain JSON describing everything a renderer needs to
rebuild the job: the calibrated camera as a vertical field of view plus a
world pose, the four bed marker positions, per-layer toolpath polylines
in millimetres with their bead width, a ring-light height schedule and a
plastic-like material description.  It deliberately carries no renderer
API calls so it can be produced and checked on machines that only have
the analysis toolkit installed.
"""

import json
import math
import os
import tempfile

import jsonschema
import numpy as np
from shapely.geometry import LineString

from layerlens.geometry import ActivePlane, CameraModel

SIMPLIFY_TOLERANCE_MM = 0.01
CHAIN_TOLERANCE_MM = 1e-9

DEFAULT_PARAMS = {
    "ring_radius_mm": 70.0,
    "ring_emission_w": 18.0,
    "base_color_rgba": (0.85, 0.12, 0.08, 1.0),
    "roughness": 0.45,
    "transmission": 0.05,
    "translucency_weight": 0.2,
    "resolution_px": (1920, 1080),
    "samples": 128,
    "seed": 0,
}


class ManifestError(ValueError):
    """Manifest cannot be built or fails validation."""


SCENE_SCHEMA = {
    "type": "object",
    "required": ["version", "camera", "markers_mm", "layer_height_mm",
                 "light_ring", "material", "render", "layers"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": 1},
        "camera": {
            "type": "object",
            "required": ["location_mm", "rotation_world_from_camera",
                         "vertical_fov_deg", "resolution_px"],
            "additionalProperties": False,
            "properties": {
                "location_mm": {"type": "array", "items": {"type": "number"},
                                "minItems": 3, "maxItems": 3},
                "rotation_world_from_camera": {
                    "type": "array", "items": {"type": "number"},
                    "minItems": 9, "maxItems": 9},
                "vertical_fov_deg": {"type": "number",
                                     "exclusiveMinimum": 0, "exclusiveMaximum": 180},
                "resolution_px": {"type": "array",
                                  "items": {"type": "integer", "minimum": 1},
                                  "minItems": 2, "maxItems": 2},
            },
        },
        "markers_mm": {
            "type": "array", "minItems": 4, "maxItems": 4,
            "items": {"type": "array", "items": {"type": "number"},
                      "minItems": 3, "maxItems": 3},
        },
        "layer_height_mm": {"type": "number", "exclusiveMinimum": 0},
        "light_ring": {
            "type": "object",
            "required": ["radius_mm", "z_schedule_mm", "emission_w"],
            "additionalProperties": False,
            "properties": {
                "radius_mm": {"type": "number", "exclusiveMinimum": 0},
                "z_schedule_mm": {"type": "array", "minItems": 1,
                                  "items": {"type": "number"}},
                "emission_w": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "material": {
            "type": "object",
            "required": ["base_color_rgba", "roughness", "transmission",
                         "translucency_weight"],
            "additionalProperties": False,
            "properties": {
                "base_color_rgba": {
                    "type": "array",
                    "items": {"type": "number", "minimum": 0, "maximum": 1},
                    "minItems": 4, "maxItems": 4},
                "roughness": {"type": "number", "minimum": 0, "maximum": 1},
                "transmission": {"type": "number", "minimum": 0, "maximum": 1},
                "translucency_weight": {"type": "number",
                                        "minimum": 0, "maximum": 1},
            },
        },
        "render": {
            "type": "object",
            "required": ["resolution_px", "samples", "seed"],
            "additionalProperties": False,
            "properties": {
                "resolution_px": {"type": "array",
                                  "items": {"type": "integer", "minimum": 1},
                                  "minItems": 2, "maxItems": 2},
                "samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "layers": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object",
                "required": ["index", "z_mm", "polylines"],
                "additionalProperties": False,
                "properties": {
                    "index": {"type": "integer", "minimum": 0},
                    "z_mm": {"type": "number", "exclusiveMinimum": 0},
                    "polylines": {
                        "type": "array", "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["width_mm", "points_mm"],
                            "additionalProperties": False,
                            "properties": {
                                "width_mm": {"type": "number",
                                             "exclusiveMinimum": 0},
                                "points_mm": {
                                    "type": "array", "minItems": 2,
                                    "items": {"type": "array",
                                              "items": {"type": "number"},
                                              "minItems": 2, "maxItems": 2}},
                            },
                        },
                    },
                },
            },
        },
    },
}


def simplify_polyline(points, tolerance=SIMPLIFY_TOLERANCE_MM):
    """Reduce a polyline, keeping every vertex farther than tolerance.

    Endpoints are always preserved; collinear interior vertices collapse.
    """
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 2:
        raise ManifestError("polyline needs at least 2 points")
    if len(pts) == 2:
        return pts
    simple = LineString(pts).simplify(tolerance, preserve_topology=False)
    return [(float(x), float(y)) for x, y in simple.coords]


def chain_polylines(segments, tol=CHAIN_TOLERANCE_MM):
    """Group consecutive extrusion segments into (width, point list) runs.

    A run breaks where the nozzle jumps (previous end != next start) or
    the bead width changes; non-extruding entries are skipped.
    """
    runs = []
    pts, width = None, None
    for seg in segments:
        if not seg.extruding:
            continue
        if (pts is not None and width == seg.width
                and abs(seg.start[0] - pts[-1][0]) <= tol
                and abs(seg.start[1] - pts[-1][1]) <= tol):
            pts.append(seg.end)
        else:
            if pts is not None:
                runs.append((width, pts))
            pts = [seg.start, seg.end]
            width = seg.width
    if pts is not None:
        runs.append((width, pts))
    return runs


def _camera_echo(cam):
    """Camera intrinsics as a vertical FOV, extrinsics as a world pose.

    The pose rotation maps renderer camera axes (x right, y up, looking
    along -z) to world axes; the projection convention here has y down
    and looks along +z, hence the axis flip.
    """
    w, h = cam.image_dims
    fov = 2.0 * math.degrees(math.atan(h / (2.0 * cam.K[1, 1])))
    world_from_cam = cam.R.T
    location = -world_from_cam @ cam.t
    rotation = world_from_cam @ np.diag([1.0, -1.0, -1.0])
    return {
        "location_mm": [float(v) for v in location],
        "rotation_world_from_camera": [float(v) for v in rotation.ravel()],
        "vertical_fov_deg": float(fov),
        "resolution_px": [int(w), int(h)],
    }


def export_manifest(program, calibration, params=None):
    """Build a scene manifest dict from a parsed program and calibration.

    `calibration` is the dict written by the calibrate command and must
    carry a `camera` block; `params` may override any DEFAULT_PARAMS key.
    """
    if calibration is None:
        raise ManifestError("calibration is required to export a scene")
    if not isinstance(calibration, dict) or "camera" not in calibration:
        raise ManifestError("calibration carries no camera model")
    if program is None or len(program.layers) == 0:
        raise ManifestError("program has no layers to export")

    cfg = dict(DEFAULT_PARAMS)
    for key, value in (params or {}).items():
        if key not in DEFAULT_PARAMS:
            raise ManifestError(f"unknown manifest parameter {key!r}")
        cfg[key] = value

    cam = CameraModel.from_dict(calibration["camera"])
    half = float(calibration.get("half_extent_mm", 45.0))
    markers = ActivePlane(z=0.0, half_extent=half).corners()

    layers = []
    for layer in program.layers:
        runs = chain_polylines(layer.segments)
        if not runs:
            raise ManifestError(f"layer {layer.index} has no extruding moves")
        polylines = [{"width_mm": float(width),
                      "points_mm": [[x, y] for x, y in
                                    simplify_polyline(pts)]}
                     for width, pts in runs]
        layers.append({"index": int(layer.index),
                       "z_mm": float(layer.z),
                       "polylines": polylines})

    manifest = {
        "version": 1,
        "camera": _camera_echo(cam),
        "markers_mm": [[float(v) for v in row] for row in markers],
        "layer_height_mm": float(program.layer_height),
        "light_ring": {
            "radius_mm": float(cfg["ring_radius_mm"]),
            "z_schedule_mm": [float(layer.z) for layer in program.layers],
            "emission_w": float(cfg["ring_emission_w"]),
        },
        "material": {
            "base_color_rgba": [float(v) for v in cfg["base_color_rgba"]],
            "roughness": float(cfg["roughness"]),
            "transmission": float(cfg["transmission"]),
            "translucency_weight": float(cfg["translucency_weight"]),
        },
        "render": {
            "resolution_px": [int(v) for v in cfg["resolution_px"]],
            "samples": int(cfg["samples"]),
            "seed": int(cfg["seed"]),
        },
        "layers": layers,
    }
    validate_manifest(manifest)
    return manifest


def validate_manifest(data, step_tol=1e-6):
    """Check a manifest against the schema plus the schedule invariants."""
    try:
        jsonschema.validate(data, SCENE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ManifestError(f"manifest schema violation: {exc.message}") from exc

    schedule = data["light_ring"]["z_schedule_mm"]
    layers = data["layers"]
    if len(schedule) != len(layers):
        raise ManifestError("z-schedule length does not match layer count")
    h = data["layer_height_mm"]
    for a, b in zip(schedule, schedule[1:]):
        if not b > a:
            raise ManifestError("z-schedule must be strictly increasing")
        if abs((b - a) - h) > step_tol:
            raise ManifestError(
                f"z-schedule step {b - a:.6f} != layer height {h:.6f}")
    for pos, layer in enumerate(layers):
        if layer["index"] != pos:
            raise ManifestError("layer indices must run 0..n-1 in order")
        if abs(layer["z_mm"] - schedule[pos]) > step_tol:
            raise ManifestError("layer z does not match its scheduled height")
    return data


def save_manifest(manifest, path):
    validate_manifest(manifest)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(manifest, fh, indent=1)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_manifest(path):
    with open(path) as fh:
        data = json.load(fh)
    return validate_manifest(data)
