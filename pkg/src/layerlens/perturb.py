"""Synthetic print-failure generators for evaluation runs.

Each generator takes a clean top-view layer image and returns a corrupted
copy plus the world-frame bbox of the affected footprint, so callers can
check that reported defect regions land where the damage was injected.
The generators cover the usual FDM failure categories: missing material,
foreign bodies on the part, stringing, dislodged parts, layer shifts, and
broken thin walls.
"""

import math

import numpy as np

from .geometry import Homography, warp_image
from .rasterref import BACKGROUND, LayerImage


class PerturbError(ValueError):
    pass


def _clone(img, pixels):
    return LayerImage(pixels=pixels, scale=img.scale, origin=img.origin,
                      valid=img.valid)


def _rect_slices(img, x0, y0, x1, y1):
    c0, r0 = img.mm_to_px(x0, y0)
    c1, r1 = img.mm_to_px(x1, y1)
    height, width = img.pixels.shape
    rows = slice(max(int(round(r0)), 0), min(int(round(r1)), height))
    cols = slice(max(int(round(c0)), 0), min(int(round(c1)), width))
    return rows, cols


def _content_bbox_mm(pixels, img, background):
    rows, cols = np.nonzero(pixels > background)
    if len(rows) == 0:
        raise PerturbError("image has no content above background")
    x0, y0 = img.px_to_mm(cols.min(), rows.min())
    x1, y1 = img.px_to_mm(cols.max(), rows.max())
    return (x0, y0, x1, y1)


def erase_patch(img, center_mm, size_mm, level=BACKGROUND):
    """Paint a square patch flat, as if material never got deposited."""
    if size_mm <= 0:
        raise PerturbError("size_mm must be positive")
    cx, cy = center_mm
    half = size_mm / 2.0
    bbox = (cx - half, cy - half, cx + half, cy + half)
    pixels = img.pixels.copy()
    rows, cols = _rect_slices(img, *bbox)
    pixels[rows, cols] = level
    return _clone(img, pixels), bbox


def thin_wall_gap(img, wall_x_mm, center_y_mm, gap_mm, wall_width_mm=5.0,
                  level=BACKGROUND):
    """Knock a vertical span out of a thin wall centred at wall_x_mm."""
    if gap_mm <= 0:
        raise PerturbError("gap_mm must be positive")
    bbox = (wall_x_mm - wall_width_mm / 2.0, center_y_mm - gap_mm / 2.0,
            wall_x_mm + wall_width_mm / 2.0, center_y_mm + gap_mm / 2.0)
    pixels = img.pixels.copy()
    rows, cols = _rect_slices(img, *bbox)
    pixels[rows, cols] = level
    return _clone(img, pixels), bbox


def foreign_blob(img, center_mm, radius_mm, rng, level=225, speckle=28.0):
    """Drop a bright speckled disc on the part (debris, detached glob)."""
    if radius_mm <= 0:
        raise PerturbError("radius_mm must be positive")
    cx, cy = center_mm
    ccol, crow = img.mm_to_px(cx, cy)
    r_px = radius_mm * img.scale
    height, width = img.pixels.shape
    cols, rows = np.meshgrid(np.arange(width), np.arange(height))
    dist = np.hypot(cols - ccol, rows - crow)
    coverage = np.clip(r_px + 0.5 - dist, 0.0, 1.0)
    noise = rng.normal(0.0, speckle, size=img.pixels.shape)
    blob = np.clip(level + noise, 0, 255)
    out = coverage * blob + (1.0 - coverage) * img.pixels.astype(float)
    pixels = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    bbox = (cx - radius_mm, cy - radius_mm, cx + radius_mm, cy + radius_mm)
    return _clone(img, pixels), bbox


def strand_scribbles(img, bbox_mm, rng, count=10, width_mm=0.5, level=220):
    """Loose bright strands wandering across the given area (stringing)."""
    if count < 1:
        raise PerturbError("count must be >= 1")
    x0, y0, x1, y1 = bbox_mm
    if not (x1 > x0 and y1 > y0):
        raise PerturbError("degenerate strand bbox")
    pixels = img.pixels.copy()
    height, width = pixels.shape
    r_px = max(width_mm * img.scale / 2.0, 0.5)
    reach = int(math.ceil(r_px))
    dy, dx = np.mgrid[-reach:reach + 1, -reach:reach + 1]
    stamp = np.hypot(dx, dy) <= r_px + 0.25
    offs = np.argwhere(stamp) - reach

    for _ in range(count):
        # quadratic arc through three random anchors in the bbox
        anchors = np.column_stack([
            rng.uniform(x0, x1, size=3), rng.uniform(y0, y1, size=3)])
        value = int(np.clip(level + rng.integers(-25, 26), 0, 255))
        ts = np.linspace(0.0, 1.0, 160)[:, None]
        pts = ((1 - ts) ** 2 * anchors[0] + 2 * ts * (1 - ts) * anchors[1]
               + ts ** 2 * anchors[2])
        cols, rows = img.mm_to_px(pts[:, 0], pts[:, 1])
        centers = np.column_stack([np.rint(rows), np.rint(cols)]).astype(int)
        spots = (centers[:, None, :] + offs[None, :, :]).reshape(-1, 2)
        ok = ((spots[:, 0] >= 0) & (spots[:, 0] < height)
              & (spots[:, 1] >= 0) & (spots[:, 1] < width))
        spots = spots[ok]
        current = pixels[spots[:, 0], spots[:, 1]]
        pixels[spots[:, 0], spots[:, 1]] = np.maximum(current, value)
    return _clone(img, pixels), tuple(bbox_mm)


def translate_part(img, dx_mm, dy_mm, rot_deg=0.0, background=BACKGROUND):
    """Move (and optionally rotate) the whole part; the plate shows where
    it used to be.  Footprint covers both old and new positions."""
    before = _content_bbox_mm(img.pixels, img, background)
    s = img.scale
    bx0, by0, bx1, by1 = before
    ccol, crow = img.mm_to_px((bx0 + bx1) / 2.0, (by0 + by1) / 2.0)
    theta = math.radians(rot_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    a = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    c = np.array([ccol, crow])
    d = np.array([dx_mm * s, dy_mm * s])
    shift = c + d - a @ c
    H = Homography(np.array([
        [a[0, 0], a[0, 1], shift[0]],
        [a[1, 0], a[1, 1], shift[1]],
        [0.0, 0.0, 1.0]]))
    height, width = img.pixels.shape
    moved = warp_image(img, H, (width, height))
    pixels = np.where(moved.valid_mask(), moved.pixels, background).astype(np.uint8)
    out = LayerImage(pixels=pixels, scale=img.scale, origin=img.origin,
                     valid=img.valid)
    after = _content_bbox_mm(pixels, out, background)
    footprint = (min(before[0], after[0]), min(before[1], after[1]),
                 max(before[2], after[2]), max(before[3], after[3]))
    return out, footprint


def layer_shift(img, dx_mm, dy_mm=0.0, background=BACKGROUND):
    """Pure in-plane offset, the classic mid-print belt-slip signature."""
    if dx_mm == 0.0 and dy_mm == 0.0:
        raise PerturbError("shift must be nonzero")
    return translate_part(img, dx_mm, dy_mm, rot_deg=0.0, background=background)
