"""Shared builders: synthetic G-code parts and their reference rasters."""

import math

import numpy as np
import pytest

from layerlens.gcode import parse_gcode
from layerlens.rasterref import default_frame, layer_mask, rasterize_layer


def multilayer_gcode(layer_paths, z_step=0.2, feed=1800):
    """layer_paths: one list of polylines (lists of (x, y)) per layer."""
    lines = ["G90", "G92 E0", f"G1 F{feed}"]
    e = 0.0
    for i, paths in enumerate(layer_paths):
        lines.append(f"G1 Z{z_step * (i + 1):.3f}")
        for path in paths:
            x0, y0 = path[0]
            lines.append(f"G1 X{x0:.3f} Y{y0:.3f}")
            for x, y in path[1:]:
                e += math.hypot(x - x0, y - y0) * 0.05
                lines.append(f"G1 X{x:.3f} Y{y:.3f} E{e:.5f}")
                x0, y0 = x, y
    return "\n".join(lines) + "\n"


def _gcode_program(paths, z=0.2, feed=1800):
    del z
    return multilayer_gcode([paths], feed=feed)


def solid_square_paths(size=40.0, spacing=0.44, origin=(-20.0, -20.0)):
    """Perimeter plus a serpentine horizontal infill."""
    x0, y0 = origin
    x1, y1 = x0 + size, y0 + size
    paths = [[(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]]
    y = y0 + spacing
    row = 0
    serp = []
    while y < y1 - spacing / 2:
        if row % 2 == 0:
            serp.append([(x0, y), (x1, y)])
        else:
            serp.append([(x1, y), (x0, y)])
        y += spacing
        row += 1
    return paths + serp


def solid_square_gcode(size=40.0, spacing=0.44, origin=(-20.0, -20.0), z=0.2):
    return _gcode_program(solid_square_paths(size, spacing, origin), z=z)


def prism_gcode(size=16.0, spacing=0.8, origin=(-8.0, -8.0), n_layers=3):
    """Identical square layers stacked: the simplest multi-layer part."""
    paths = solid_square_paths(size, spacing, origin)
    return multilayer_gcode([paths] * n_layers)


def comb_gcode(wall_thickness=3.5, spacing=0.44, z=0.2):
    """Five thick-stroke thin walls plus a connecting base bar."""
    paths = []
    passes = max(2, int(round(wall_thickness / spacing)))
    for cx in (-14.0, -7.0, 0.0, 7.0, 14.0):
        start = cx - spacing * (passes - 1) / 2.0
        for i in range(passes):
            x = start + i * spacing
            if i % 2 == 0:
                paths.append([(x, -18.0), (x, 18.0)])
            else:
                paths.append([(x, 18.0), (x, -18.0)])
    for j in range(4):
        y = -18.0 - 0.44 * j
        paths.append([(-16.0, y), (16.0, y)])
    return _gcode_program(paths, z=z)


def build_reference(gcode_text, scale=6.67, closing_radius=0.5, margin=2.0):
    """Parse, rasterize, and mask the first layer in one shared frame."""
    program = parse_gcode(gcode_text)
    layer = program.layers[0]
    origin, dims = default_frame(layer.bbox, scale, margin)
    ref = rasterize_layer(layer, scale=scale, origin=origin, dims=dims)
    mask = layer_mask(layer, scale=scale, closing_radius=closing_radius,
                      origin=origin, dims=dims)
    return ref, mask, layer


@pytest.fixture(scope="session")
def small_square_reference():
    """16 mm solid square: compact but block-rich (session-cached)."""
    return build_reference(solid_square_gcode(size=16.0, origin=(-8.0, -8.0)))


@pytest.fixture(scope="session")
def desk_square_reference():
    """The 40 mm solid square at the standard working scale."""
    return build_reference(solid_square_gcode())


@pytest.fixture(scope="session")
def comb_reference():
    return build_reference(comb_gcode())
