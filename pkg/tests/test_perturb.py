import numpy as np
import pytest

from layerlens.perturb import (
    PerturbError,
    erase_patch,
    foreign_blob,
    layer_shift,
    strand_scribbles,
    thin_wall_gap,
    translate_part,
)
from layerlens.rasterref import LayerImage


def checkered_image(scale=4.0, side=120, origin=(-15.0, -15.0)):
    rng = np.random.default_rng(77)
    px = np.full((side, side), 30, dtype=np.uint8)
    body = rng.integers(120, 240, size=(side - 40, side - 40), dtype=np.uint8)
    px[20:-20, 20:-20] = body
    return LayerImage(pixels=px, scale=scale, origin=origin)


class TestErasePatch:
    def test_patch_flattened(self, small_square_reference):
        ref, _, _ = small_square_reference
        out, bbox = erase_patch(ref, (0.0, 0.0), 6.0)
        rows, cols = out.pixels.shape[0] // 2, out.pixels.shape[1] // 2
        assert out.pixels[rows, cols] == 30
        assert bbox == (-3.0, -3.0, 3.0, 3.0)
        # far corner untouched
        assert out.pixels[0, 0] == ref.pixels[0, 0]
        assert out.scale == ref.scale and out.origin == ref.origin

    def test_original_not_mutated(self, small_square_reference):
        ref, _, _ = small_square_reference
        before = ref.pixels.copy()
        erase_patch(ref, (0.0, 0.0), 6.0)
        assert np.array_equal(ref.pixels, before)

    def test_bad_size(self, small_square_reference):
        ref, _, _ = small_square_reference
        with pytest.raises(PerturbError):
            erase_patch(ref, (0.0, 0.0), 0.0)


class TestThinWallGap:
    def test_band_erased(self):
        img = checkered_image()
        out, bbox = thin_wall_gap(img, 0.0, 0.0, 8.0, wall_width_mm=4.0)
        c0, r0 = img.mm_to_px(bbox[0], bbox[1])
        c1, r1 = img.mm_to_px(bbox[2], bbox[3])
        band = out.pixels[int(r0):int(r1), int(c0):int(c1)]
        assert (band == 30).all()
        assert bbox == (-2.0, -4.0, 2.0, 4.0)


class TestForeignBlob:
    def test_blob_bright_and_local(self):
        img = checkered_image()
        rng = np.random.default_rng(5)
        out, bbox = foreign_blob(img, (0.0, 0.0), 4.0, rng, level=225)
        ccol, crow = img.mm_to_px(0.0, 0.0)
        assert out.pixels[int(crow), int(ccol)] > 150
        assert bbox == (-4.0, -4.0, 4.0, 4.0)
        # pixels clearly outside the disc are untouched
        cols, rows = np.meshgrid(np.arange(120), np.arange(120))
        dist = np.hypot(cols - ccol, rows - crow)
        outside = dist > 4.0 * img.scale + 1.0
        assert np.array_equal(out.pixels[outside], img.pixels[outside])

    def test_deterministic_given_seed(self):
        img = checkered_image()
        a, _ = foreign_blob(img, (1.0, -2.0), 3.0, np.random.default_rng(9))
        b, _ = foreign_blob(img, (1.0, -2.0), 3.0, np.random.default_rng(9))
        assert np.array_equal(a.pixels, b.pixels)

    def test_bad_radius(self):
        with pytest.raises(PerturbError):
            foreign_blob(checkered_image(), (0, 0), -1.0,
                         np.random.default_rng(0))


class TestStrands:
    def test_strands_brighten_inside_bbox(self):
        img = checkered_image()
        out, bbox = strand_scribbles(img, (-10, -10, 10, 10),
                                     np.random.default_rng(3), count=8)
        changed = out.pixels != img.pixels
        assert changed.sum() > 100
        # nothing changes far outside the scribble area
        c0, r0 = img.mm_to_px(-11.0, -11.0)
        assert not changed[:int(r0), :].any()
        assert not changed[:, :int(c0)].any()
        # strands only ever brighten
        assert (out.pixels.astype(int) >= img.pixels.astype(int)).all()

    def test_deterministic(self):
        img = checkered_image()
        a, _ = strand_scribbles(img, (-10, -10, 10, 10),
                                np.random.default_rng(21))
        b, _ = strand_scribbles(img, (-10, -10, 10, 10),
                                np.random.default_rng(21))
        assert np.array_equal(a.pixels, b.pixels)

    def test_bad_args(self):
        img = checkered_image()
        with pytest.raises(PerturbError):
            strand_scribbles(img, (-10, -10, 10, 10),
                             np.random.default_rng(0), count=0)
        with pytest.raises(PerturbError):
            strand_scribbles(img, (5, 5, -5, -5), np.random.default_rng(0))


class TestTranslate:
    def test_integer_shift_is_exact(self):
        img = checkered_image(scale=4.0)
        out, footprint = layer_shift(img, 3.0)  # 12 px, exact
        assert np.array_equal(out.pixels[:, 12:], img.pixels[:, :-12])
        assert (out.pixels[:, :12] == 30).all()
        assert out.valid is img.valid

    def test_footprint_covers_old_and_new(self):
        img = checkered_image(scale=4.0)
        out, footprint = translate_part(img, 4.0, 2.0)
        x0, y0, x1, y1 = footprint
        # original content pixels span [-10, 9.75] mm; moving adds (4, 2)
        assert x0 <= -9.9 and y0 <= -9.9
        assert x1 >= 13.7 and y1 >= 11.7

    def test_rotation_moves_corners(self):
        img = checkered_image(scale=4.0)
        out, _ = translate_part(img, 0.0, 0.0, rot_deg=10.0)
        assert not np.array_equal(out.pixels, img.pixels)
        # content mass is conserved to a few percent
        before = (img.pixels > 30).sum()
        after = (out.pixels > 30).sum()
        assert abs(after - before) < 0.05 * before

    def test_zero_shift_rejected(self):
        with pytest.raises(PerturbError):
            layer_shift(checkered_image(), 0.0, 0.0)
