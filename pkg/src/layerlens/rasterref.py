"""Deterministic synthetic reference rasters from layer toolpaths.

Each extrusion segment is drawn as an anti-aliased thick stroke with
round caps and a cosine cross-bead shading profile (bright centerline,
darker edges over a dark background) so that filled regions carry the
local gradient structure the descriptor stage needs.  Masks of the
printed region come from the same strokes, binarized and morphologically
closed to bridge inter-bead gaps.
"""

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .util import atomic_write_bytes

BACKGROUND = 30
BEAD_CENTER = 230
BEAD_EDGE = 140

DEFAULT_SCALE = 6.67          # px per mm
DEFAULT_CLOSING_RADIUS = 0.5  # mm
FRAME_MARGIN_MM = 2.0


class RasterError(ValueError):
    pass


class EmptyLayerError(RasterError):
    pass


@dataclass
class LayerImage:
    """Grayscale raster at a fixed physical scale.

    origin is the world-mm coordinate of pixel (0, 0); pixel (col, row)
    sits at world (origin_x + col/scale, origin_y + row/scale).  valid
    marks pixels that carry usable data (None means all of them).
    """

    pixels: np.ndarray
    scale: float
    origin: tuple = (0.0, 0.0)
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 2:
            raise RasterError("pixels must be a 2D uint8 array")
        if not self.scale > 0:
            raise RasterError("scale must be positive")
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        if self.valid is not None:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.pixels.shape:
                raise RasterError("valid mask dims must match pixels")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def valid_mask(self):
        """Validity as a concrete boolean array."""
        if self.valid is None:
            return np.ones(self.pixels.shape, dtype=bool)
        return self.valid

    def px_to_mm(self, col, row):
        return (self.origin[0] + col / self.scale, self.origin[1] + row / self.scale)

    def mm_to_px(self, x, y):
        return ((x - self.origin[0]) * self.scale, (y - self.origin[1]) * self.scale)


@dataclass
class RegionMask:
    """Binary printed-region footprint sharing a LayerImage's frame."""

    bits: np.ndarray
    scale: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise RasterError("bits must be 2D")
        if not self.scale > 0:
            raise RasterError("scale must be positive")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def popcount(self):
        return int(self.bits.sum())


def default_frame(bbox, scale, margin_mm=FRAME_MARGIN_MM):
    """Origin and pixel dims for a toolpath bbox plus a margin."""
    xmin, ymin, xmax, ymax = bbox
    origin = (xmin - margin_mm, ymin - margin_mm)
    width = int(math.ceil((xmax - xmin + 2 * margin_mm) * scale)) + 1
    height = int(math.ceil((ymax - ymin + 2 * margin_mm) * scale)) + 1
    return origin, (width, height)


def _accumulate_segment(cov, contrib, a_px, b_px, half_w_px, center, edge, background):
    """Fold one stroke into per-pixel coverage and intensity-lift canvases.

    Overlaps resolve by per-pixel maximum, which is order-independent and
    equals the exact single-stroke render where strokes do not overlap.
    """
    height, width = cov.shape
    pad = half_w_px + 1.0
    x0 = max(0, int(math.floor(min(a_px[0], b_px[0]) - pad)))
    x1 = min(width, int(math.ceil(max(a_px[0], b_px[0]) + pad)) + 1)
    y0 = max(0, int(math.floor(min(a_px[1], b_px[1]) - pad)))
    y1 = min(height, int(math.ceil(max(a_px[1], b_px[1]) + pad)) + 1)
    if x0 >= x1 or y0 >= y1:
        return

    xs = np.arange(x0, x1, dtype=float)
    ys = np.arange(y0, y1, dtype=float)
    X, Y = np.meshgrid(xs, ys)

    dx = b_px[0] - a_px[0]
    dy = b_px[1] - a_px[1]
    seg_len2 = dx * dx + dy * dy
    if seg_len2 == 0.0:
        dist = np.hypot(X - a_px[0], Y - a_px[1])
    else:
        tpar = ((X - a_px[0]) * dx + (Y - a_px[1]) * dy) / seg_len2
        np.clip(tpar, 0.0, 1.0, out=tpar)
        dist = np.hypot(X - (a_px[0] + tpar * dx), Y - (a_px[1] + tpar * dy))

    coverage = np.clip(half_w_px + 0.5 - dist, 0.0, 1.0)
    profile = np.clip(dist / half_w_px, 0.0, 1.0) if half_w_px > 0 else dist * 0.0
    intensity = edge + (center - edge) * np.cos(profile * (math.pi / 2.0))
    lift = coverage * (intensity - background)

    np.maximum(cov[y0:y1, x0:x1], coverage, out=cov[y0:y1, x0:x1])
    np.maximum(contrib[y0:y1, x0:x1], lift, out=contrib[y0:y1, x0:x1])


def _layer_canvases(layer, scale, origin, dims, background):
    width, height = dims
    cov = np.zeros((height, width))
    contrib = np.zeros((height, width))
    for seg in layer.segments:
        if not seg.extruding:
            continue
        a = ((seg.start[0] - origin[0]) * scale, (seg.start[1] - origin[1]) * scale)
        b = ((seg.end[0] - origin[0]) * scale, (seg.end[1] - origin[1]) * scale)
        _accumulate_segment(
            cov, contrib, a, b, seg.width * scale / 2.0,
            BEAD_CENTER, BEAD_EDGE, background,
        )
    return cov, contrib


def _require_segments(layer):
    if not any(seg.extruding for seg in layer.segments):
        raise EmptyLayerError(f"layer {layer.index} has no extruding segments")


def rasterize_layer(layer, scale=DEFAULT_SCALE, background=BACKGROUND, *,
                    origin=None, dims=None):
    """Render one layer's toolpath as a shaded grayscale raster."""
    _require_segments(layer)
    if origin is None or dims is None:
        origin, dims = default_frame(layer.bbox, scale)
    _, contrib = _layer_canvases(layer, scale, origin, dims, background)
    pixels = np.clip(np.rint(background + contrib), 0, 255).astype(np.uint8)
    return LayerImage(pixels=pixels, scale=scale, origin=origin)


def rasterize_stack(layers, scale=DEFAULT_SCALE, background=BACKGROUND, *,
                    origin=None, dims=None):
    """Render layers bottom-up with painter compositing (top layer wins).

    Returns the composite LayerImage for the final layer in the list, the
    view a downward camera would have of the stacked print.
    """
    layers = list(layers)
    if not layers:
        raise EmptyLayerError("no layers to rasterize")
    for layer in layers:
        _require_segments(layer)
    if origin is None or dims is None:
        xmin = min(l.bbox[0] for l in layers)
        ymin = min(l.bbox[1] for l in layers)
        xmax = max(l.bbox[2] for l in layers)
        ymax = max(l.bbox[3] for l in layers)
        origin, dims = default_frame((xmin, ymin, xmax, ymax), scale)
    out = np.full((dims[1], dims[0]), float(background))
    for layer in layers:
        cov, contrib = _layer_canvases(layer, scale, origin, dims, background)
        out = contrib + cov * background + (1.0 - cov) * out
    pixels = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return LayerImage(pixels=pixels, scale=scale, origin=origin)


def _disc_element(radius_px):
    span = np.arange(-radius_px, radius_px + 1)
    xx, yy = np.meshgrid(span, span)
    return xx * xx + yy * yy <= radius_px * radius_px


def stroke_bits(layer, scale=DEFAULT_SCALE, *, origin=None, dims=None):
    """Raw (unclosed) stroke footprint of a layer."""
    _require_segments(layer)
    if origin is None or dims is None:
        origin, dims = default_frame(layer.bbox, scale)
    cov, _ = _layer_canvases(layer, scale, origin, dims, BACKGROUND)
    return cov > 0.0, origin


def close_bits(bits, scale, closing_radius):
    """Morphological closing with a disc element, padded so the border
    does not clip the dilation."""
    radius_px = int(round(closing_radius * scale))
    if radius_px <= 0:
        return bits
    pad = radius_px + 1
    padded = np.pad(bits, pad)
    closed = ndimage.binary_closing(padded, structure=_disc_element(radius_px))
    return closed[pad:-pad, pad:-pad]


def layer_mask(layer, scale=DEFAULT_SCALE, closing_radius=DEFAULT_CLOSING_RADIUS, *,
               origin=None, dims=None):
    """Printed-region mask: binarized strokes, closed to fill bead gaps."""
    if closing_radius < 0:
        raise RasterError("closing_radius must not be negative")
    bits, origin = stroke_bits(layer, scale, origin=origin, dims=dims)
    return RegionMask(bits=close_bits(bits, scale, closing_radius),
                      scale=scale, origin=origin)


def stack_mask(layers, scale=DEFAULT_SCALE, closing_radius=DEFAULT_CLOSING_RADIUS, *,
               origin=None, dims=None):
    """Cumulative printed-region mask of a layer stack (union of strokes)."""
    layers = list(layers)
    if not layers:
        raise EmptyLayerError("no layers to mask")
    if origin is None or dims is None:
        raise RasterError("stack_mask needs an explicit shared frame")
    union = None
    for layer in layers:
        bits, _ = stroke_bits(layer, scale, origin=origin, dims=dims)
        union = bits if union is None else (union | bits)
    return RegionMask(bits=close_bits(union, scale, closing_radius),
                      scale=scale, origin=origin)


def apply_mask(img, mask):
    """Flag pixels outside the mask invalid; intensities are untouched."""
    if mask.bits.shape != img.pixels.shape:
        raise RasterError("mask dims do not match image dims")
    if mask.scale != img.scale or mask.origin != img.origin:
        raise RasterError("mask frame does not match image frame")
    valid = mask.bits if img.valid is None else (img.valid & mask.bits)
    return LayerImage(pixels=img.pixels.copy(), scale=img.scale,
                      origin=img.origin, valid=valid.copy())


def image_png_bytes(img):
    buf = io.BytesIO()
    Image.fromarray(img.pixels, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_png_bytes(mask):
    buf = io.BytesIO()
    arr = np.where(mask.bits, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def save_image_png(img, path):
    atomic_write_bytes(path, image_png_bytes(img))


def save_mask_png(mask, path):
    atomic_write_bytes(path, mask_png_bytes(mask))


def load_image_png(path, scale, origin=(0.0, 0.0)):
    with Image.open(path) as im:
        pixels = np.asarray(im.convert("L"), dtype=np.uint8)
    return LayerImage(pixels=pixels, scale=scale, origin=origin)


def load_mask_png(path, scale, origin=(0.0, 0.0)):
    with Image.open(path) as im:
        bits = np.asarray(im.convert("L")) >= 128
    return RegionMask(bits=bits, scale=scale, origin=origin)
