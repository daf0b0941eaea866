"""Scene construction script executed inside the renderer.

Invoked through the renderer's background mode:

    blender --background --factory-startup -noaudio \
        --python scene_build.py -- manifest.json out_dir frame [frame ...]

One `RB FRAME <i> OK <path>` or `RB FRAME <i> FAIL <message>` line is
printed per requested frame; the driver in render.py parses these.  A
frame for layer i shows everything deposited up to and including layer i,
lit by the ring at that layer's scheduled height.  World units are
millimetres throughout.
"""

import json
import math
import sys
from pathlib import Path

try:
    import bpy
    from mathutils import Matrix
except ImportError:  # importable outside the renderer for arg parsing only
    bpy = None
    Matrix = None

BED_COLOR = (0.055, 0.055, 0.06, 1.0)
MARKER_COLOR = (0.9, 0.9, 0.9, 1.0)
MARKER_RADIUS_MM = 3.0
RING_TUBE_MM = 2.0


def parse_args(argv):
    """Split renderer argv at `--` into (manifest_path, out_dir, frames)."""
    if "--" in argv:
        argv = argv[argv.index("--") + 1:]
    if len(argv) < 3:
        raise SystemExit(
            "usage: ... --python scene_build.py -- manifest out_dir frame...")
    return Path(argv[0]), Path(argv[1]), [int(a) for a in argv[2:]]


def _wipe_scene():
    for obj in list(bpy.data.objects):
        bpy.data.objects.remove(obj, do_unlink=True)


def _set_principled(bsdf, name, value, alternates=()):
    for key in (name, *alternates):
        if key in bsdf.inputs:
            bsdf.inputs[key].default_value = value
            return
    # older/newer node layouts may drop a socket; ignore silently


def _deposit_material(spec):
    mat = bpy.data.materials.new("deposit")
    mat.use_nodes = True
    tree = mat.node_tree
    bsdf = tree.nodes["Principled BSDF"]
    color = tuple(spec["base_color_rgba"])
    bsdf.inputs["Base Color"].default_value = color
    bsdf.inputs["Roughness"].default_value = spec["roughness"]
    _set_principled(bsdf, "Transmission Weight", spec["transmission"],
                    alternates=("Transmission",))

    translucent = tree.nodes.new("ShaderNodeBsdfTranslucent")
    translucent.inputs["Color"].default_value = color
    mix = tree.nodes.new("ShaderNodeMixShader")
    mix.inputs["Fac"].default_value = spec["translucency_weight"]
    out = tree.nodes["Material Output"]
    tree.links.new(mix.inputs[1], bsdf.outputs["BSDF"])
    tree.links.new(mix.inputs[2], translucent.outputs["BSDF"])
    tree.links.new(out.inputs["Surface"], mix.outputs["Shader"])
    return mat


def _flat_material(name, rgba, roughness=0.9):
    mat = bpy.data.materials.new(name)
    mat.use_nodes = True
    bsdf = mat.node_tree.nodes["Principled BSDF"]
    bsdf.inputs["Base Color"].default_value = tuple(rgba)
    bsdf.inputs["Roughness"].default_value = roughness
    return mat


def _emissive_material(power_w):
    mat = bpy.data.materials.new("ring_light")
    mat.use_nodes = True
    tree = mat.node_tree
    tree.nodes.remove(tree.nodes["Principled BSDF"])
    emit = tree.nodes.new("ShaderNodeEmission")
    emit.inputs["Strength"].default_value = power_w
    tree.links.new(tree.nodes["Material Output"].inputs["Surface"],
                   emit.outputs["Emission"])
    return mat


def _add_camera(scene, cam_spec):
    data = bpy.data.cameras.new("rig_cam")
    data.sensor_fit = "VERTICAL"
    data.angle_y = math.radians(cam_spec["vertical_fov_deg"])
    data.clip_start = 1.0
    data.clip_end = 10000.0
    obj = bpy.data.objects.new("rig_cam", data)
    scene.collection.objects.link(obj)
    r = cam_spec["rotation_world_from_camera"]
    loc = cam_spec["location_mm"]
    obj.matrix_world = Matrix((
        (r[0], r[1], r[2], loc[0]),
        (r[3], r[4], r[5], loc[1]),
        (r[6], r[7], r[8], loc[2]),
        (0.0, 0.0, 0.0, 1.0),
    ))
    scene.camera = obj
    return obj


def _add_bed(scene, markers, bed_mat, marker_mat):
    extent = max(abs(v) for row in markers for v in row[:2]) + 25.0
    bpy.ops.mesh.primitive_plane_add(size=2.0 * extent,
                                     location=(0.0, 0.0, 0.0))
    bed = bpy.context.active_object
    bed.name = "bed"
    bed.data.materials.append(bed_mat)
    for i, (x, y, z) in enumerate(markers):
        bpy.ops.mesh.primitive_cylinder_add(
            radius=MARKER_RADIUS_MM, depth=0.2, location=(x, y, z + 0.1))
        disc = bpy.context.active_object
        disc.name = f"marker_{i}"
        disc.data.materials.append(marker_mat)


def _add_ring(scene, ring_spec):
    bpy.ops.mesh.primitive_torus_add(
        major_radius=ring_spec["radius_mm"], minor_radius=RING_TUBE_MM,
        location=(0.0, 0.0, ring_spec["z_schedule_mm"][0]))
    ring = bpy.context.active_object
    ring.name = "ring_light"
    ring.data.materials.append(_emissive_material(ring_spec["emission_w"]))
    return ring


def _add_layer_curves(scene, layer, layer_height, mat):
    """One curve object per bead width within the layer."""
    by_width = {}
    for pl in layer["polylines"]:
        by_width.setdefault(pl["width_mm"], []).append(pl["points_mm"])
    objs = []
    z_center = layer["z_mm"] - 0.5 * layer_height
    for width, chains in by_width.items():
        data = bpy.data.curves.new(f"layer_{layer['index']}", type="CURVE")
        data.dimensions = "3D"
        data.bevel_depth = 0.5 * width
        data.bevel_resolution = 3
        data.fill_mode = "FULL"
        data.use_fill_caps = True
        for points in chains:
            spline = data.splines.new("POLY")
            spline.points.add(len(points) - 1)
            for k, (x, y) in enumerate(points):
                spline.points[k].co = (x, y, z_center, 1.0)
        obj = bpy.data.objects.new(f"layer_{layer['index']}", data)
        obj.data.materials.append(mat)
        scene.collection.objects.link(obj)
        objs.append(obj)
    return objs


def _configure_render(scene, render_spec):
    scene.render.engine = "CYCLES"
    scene.cycles.samples = render_spec["samples"]
    scene.cycles.seed = render_spec["seed"]
    scene.cycles.use_animated_seed = False
    scene.render.resolution_x = render_spec["resolution_px"][0]
    scene.render.resolution_y = render_spec["resolution_px"][1]
    scene.render.resolution_percentage = 100
    scene.render.image_settings.file_format = "PNG"
    scene.render.image_settings.color_mode = "RGB"
    scene.world.use_nodes = True
    bg = scene.world.node_tree.nodes["Background"]
    bg.inputs["Color"].default_value = (0.01, 0.01, 0.012, 1.0)
    bg.inputs["Strength"].default_value = 0.3


def render_frames(data, out_dir, frames):
    scene = bpy.context.scene
    _wipe_scene()
    _configure_render(scene, data["render"])
    _add_camera(scene, data["camera"])
    _add_bed(scene, data["markers_mm"],
             _flat_material("bed", BED_COLOR),
             _flat_material("marker", MARKER_COLOR, roughness=0.4))
    ring = _add_ring(scene, data["light_ring"])
    deposit = _deposit_material(data["material"])

    layers = data["layers"]
    schedule = data["light_ring"]["z_schedule_mm"]
    h = data["layer_height_mm"]
    built = {}
    for frame in frames:
        try:
            if not 0 <= frame < len(layers):
                raise IndexError(f"frame {frame} outside 0..{len(layers) - 1}")
            # frames show the part as printed so far; build incrementally
            for idx in range(frame + 1):
                if idx not in built:
                    built[idx] = _add_layer_curves(scene, layers[idx], h,
                                                   deposit)
            for idx in list(built):
                if idx > frame:
                    for obj in built.pop(idx):
                        bpy.data.objects.remove(obj, do_unlink=True)
            ring.location[2] = schedule[frame]
            path = Path(out_dir) / f"ref_{frame}.png"
            scene.render.filepath = str(path)
            bpy.ops.render.render(write_still=True)
            print(f"RB FRAME {frame} OK {path}", flush=True)
        except Exception as exc:
            print(f"RB FRAME {frame} FAIL {exc}", flush=True)


def main():
    if bpy is None:
        raise SystemExit("scene_build must run inside the renderer's python")
    manifest_path, out_dir, frames = parse_args(sys.argv)
    data = json.loads(manifest_path.read_text())
    out_dir.mkdir(parents=True, exist_ok=True)
    render_frames(data, out_dir, frames)


if __name__ == "__main__":
    main()
