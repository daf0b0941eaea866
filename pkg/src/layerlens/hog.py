"""Histogram-of-oriented-gradients descriptor fields.

Pipeline: centered-difference gradients with unsigned orientation in
[0, 180), magnitude-weighted cell histograms with linear interpolation
between the two nearest bin centers, then overlapping square blocks of
concatenated cell histograms, each L2-normalized.  The result is an
N x M x k tensor of block descriptors plus a per-block validity grid.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class HogError(ValueError):
    pass


@dataclass(frozen=True)
class HogConfig:
    cell_px: int = 8
    bins: int = 9
    block_cells: int = 2
    block_stride_cells: int = 1
    norm_epsilon: float = 1e-6

    def __post_init__(self):
        if self.cell_px < 2:
            raise HogError("cell_px must be >= 2")
        if self.bins < 2:
            raise HogError("bins must be >= 2")
        if self.block_cells < 1 or self.block_stride_cells < 1:
            raise HogError("block geometry must be positive")
        if not self.norm_epsilon > 0:
            raise HogError("norm_epsilon must be positive")

    @property
    def block_px(self):
        return self.cell_px * self.block_cells

    @property
    def stride_px(self):
        return self.cell_px * self.block_stride_cells

    @property
    def descriptor_size(self):
        return self.block_cells * self.block_cells * self.bins

    @property
    def bin_width_deg(self):
        return 180.0 / self.bins


@dataclass
class GradientField:
    magnitude: np.ndarray
    orientation: np.ndarray  # degrees in [0, 180)

    def __post_init__(self):
        self.magnitude = np.asarray(self.magnitude, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)
        if self.magnitude.shape != self.orientation.shape:
            raise HogError("magnitude/orientation shapes differ")


@dataclass
class HogField:
    blocks: np.ndarray       # (N, M, k)
    grid_dims: tuple         # (N, M)
    config: HogConfig
    block_valid: np.ndarray  # (N, M) booleans


def _image_array(img):
    pixels = getattr(img, "pixels", img)
    return np.asarray(pixels, dtype=float)


def gradients(img):
    """Centered-difference gradients with replicated borders.

    A horizontal ramp I(x,y)=x yields gx=1; orientation is the gradient
    direction folded into [0, 180), so a vertical edge votes at 0 deg.
    """
    arr = _image_array(img)
    if arr.ndim != 2 or arr.shape[0] < 3 or arr.shape[1] < 3:
        raise HogError("image must be at least 3x3")
    padded = np.pad(arr, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) * 0.5
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) * 0.5
    magnitude = np.hypot(gx, gy)
    orientation = np.degrees(np.arctan2(gy, gx)) % 180.0
    return GradientField(magnitude=magnitude, orientation=orientation)


def cell_histograms(grad, cfg=HogConfig()):
    """Per-cell orientation histograms, magnitude-weighted.

    Each pixel splits its magnitude between the two nearest bin centers
    (at bin_width/2 + bin_width*k degrees, circular over the half-turn)
    by linear interpolation.  Trailing partial cells are discarded.
    """
    mag = grad.magnitude
    ori = grad.orientation
    rows, cols = mag.shape
    cp = cfg.cell_px
    n_rows = rows // cp
    n_cols = cols // cp
    if n_rows < 1 or n_cols < 1:
        raise HogError("image smaller than one cell")

    mag = mag[: n_rows * cp, : n_cols * cp]
    ori = ori[: n_rows * cp, : n_cols * cp]

    bw = cfg.bin_width_deg
    pos = ori / bw - 0.5
    low = np.floor(pos)
    frac = pos - low
    bin_lo = low.astype(int) % cfg.bins
    bin_hi = (bin_lo + 1) % cfg.bins
    w_lo = mag * (1.0 - frac)
    w_hi = mag * frac

    cell_row = np.arange(n_rows * cp) // cp
    cell_col = np.arange(n_cols * cp) // cp
    cell_index = cell_row[:, None] * n_cols + cell_col[None, :]

    size = n_rows * n_cols * cfg.bins
    flat_lo = cell_index * cfg.bins + bin_lo
    flat_hi = cell_index * cfg.bins + bin_hi
    hist = np.bincount(flat_lo.ravel(), weights=w_lo.ravel(), minlength=size)
    hist += np.bincount(flat_hi.ravel(), weights=w_hi.ravel(), minlength=size)
    return hist.reshape(n_rows, n_cols, cfg.bins)


def block_descriptors(cells, cfg=HogConfig()):
    """Sliding-window blocks of concatenated cell histograms, L2-normalized.

    Standalone, the only validity signal is gradient energy: all-zero
    blocks come back flagged invalid.  compute_hog replaces this flag
    with pixel-level validity when an image mask is available.
    """
    cells = np.asarray(cells, dtype=float)
    n_rows, n_cols, bins = cells.shape
    bc = cfg.block_cells
    st = cfg.block_stride_cells
    if n_rows < bc or n_cols < bc:
        raise HogError("cell grid smaller than one block")

    windows = sliding_window_view(cells, (bc, bc, bins))[::st, ::st, 0]
    N, M = windows.shape[:2]
    vectors = windows.reshape(N, M, bc * bc * bins)
    norms = np.sqrt(np.sum(vectors * vectors, axis=-1)
                    + cfg.norm_epsilon * cfg.norm_epsilon)
    blocks = vectors / norms[..., None]
    energy = vectors.sum(axis=-1) > 0.0
    return HogField(blocks=blocks, grid_dims=(N, M), config=cfg,
                    block_valid=energy)


def _block_validity(valid, cfg, n_rows, n_cols):
    """A block is valid iff every constituent pixel is valid."""
    cp = cfg.cell_px
    cropped = valid[: n_rows * cp, : n_cols * cp]
    cell_ok = cropped.reshape(n_rows, cp, n_cols, cp).all(axis=(1, 3))
    bc = cfg.block_cells
    st = cfg.block_stride_cells
    win = sliding_window_view(cell_ok, (bc, bc))[::st, ::st]
    return win.all(axis=(2, 3))


def compute_hog(img, cfg=HogConfig()):
    """gradients -> cell_histograms -> block_descriptors over a LayerImage.

    block_valid is false exactly where any constituent pixel is invalid
    (from masking or warping); flat-but-valid regions keep their all-zero
    descriptors and are scored by the similarity stage's paired-zero rules.
    """
    grad = gradients(img)
    cells = cell_histograms(grad, cfg)
    fieldout = block_descriptors(cells, cfg)
    n_rows, n_cols = cells.shape[:2]
    valid = getattr(img, "valid", None)
    if valid is not None:
        block_ok = _block_validity(np.asarray(valid, dtype=bool), cfg, n_rows, n_cols)
    else:
        block_ok = np.ones(fieldout.grid_dims, dtype=bool)
    fieldout.block_valid = block_ok
    return fieldout


def hog_field_dict(field_in):
    """JSON-friendly dump of a HogField (debugging aid)."""
    cfg = field_in.config
    return {
        "grid_dims": list(field_in.grid_dims),
        "config": {
            "cell_px": cfg.cell_px,
            "bins": cfg.bins,
            "block_cells": cfg.block_cells,
            "block_stride_cells": cfg.block_stride_cells,
            "norm_epsilon": cfg.norm_epsilon,
        },
        "blocks": [[list(map(float, vec)) for vec in row] for row in field_in.blocks],
        "block_valid": [[bool(v) for v in row] for row in field_in.block_valid],
    }
