import numpy as np
import pytest

from layerlens.geometry import (
    ActivePlane,
    BehindCameraError,
    CameraModel,
    DegenerateQuadError,
    GeometryError,
    Homography,
    MarkerMissingError,
    PointAtInfinityError,
    active_plane_homography,
    detect_markers,
    estimate_homography,
    project_point,
    project_points,
    top_view_corners,
    warp_image,
    warp_point,
    warp_points,
)
from layerlens.rasterref import LayerImage


def unit_camera():
    return CameraModel(K=np.eye(3), R=np.eye(3), t=np.array([0.0, 0.0, 1.0]),
                       image_dims=(100, 100))


def down_camera(f=800.0, cx=320.0, cy=240.0, height=300.0):
    """Camera straight above the origin, optical axis pointing down."""
    K = np.array([[f, 0, cx], [0, f, cy], [0, 0, 1.0]])
    R = np.diag([1.0, -1.0, -1.0])
    return CameraModel(K=K, R=R, t=np.array([0.0, 0.0, height]),
                       image_dims=(640, 480))


def tilted_camera():
    angle = np.deg2rad(35.0)
    c, s = np.cos(angle), np.sin(angle)
    tilt = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    R = tilt @ np.diag([1.0, -1.0, -1.0])
    K = np.array([[900.0, 0, 320], [0, 900.0, 240], [0, 0, 1]])
    return CameraModel(K=K, R=R, t=np.array([0.0, 40.0, 260.0]),
                       image_dims=(640, 480))


UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def test_project_optical_axis():
    assert np.allclose(project_point(unit_camera(), (0, 0, 0)), (0.0, 0.0))


def test_project_unit_offset():
    assert np.allclose(project_point(unit_camera(), (1, 0, 0)), (1.0, 0.0))


def test_project_behind_camera():
    # depth of (0,0,z) under this camera is z + 1
    with pytest.raises(BehindCameraError):
        project_point(unit_camera(), (0, 0, -2.0))


def test_plane_projection_is_homography():
    cam = tilted_camera()
    plane_pts = np.array([[-30, -30], [40, -25], [35, 38], [-28, 33]], dtype=float)
    world = np.column_stack([plane_pts, np.full(4, 7.5)])
    px = project_points(cam, world)
    H = estimate_homography(plane_pts, px)
    # a fifth point on the same plane must obey the fitted homography
    extra = np.array([4.2, -11.0])
    direct = project_point(cam, (extra[0], extra[1], 7.5))
    assert np.allclose(warp_point(H, extra), direct, atol=1e-9)


def test_homography_identity_case():
    H = estimate_homography(UNIT_SQUARE, UNIT_SQUARE)
    assert np.allclose(H.M, np.eye(3), atol=1e-9)


def test_homography_translation_case():
    H = estimate_homography(UNIT_SQUARE, UNIT_SQUARE + np.array([5.0, 7.0]))
    expect = np.array([[1, 0, 5], [0, 1, 7], [0, 0, 1.0]])
    assert np.allclose(H.M, expect, atol=1e-9)


def test_homography_recovers_random_matrix():
    rng = np.random.default_rng(7)
    for _ in range(50):
        M = np.eye(3) + rng.normal(scale=0.2, size=(3, 3))
        if abs(np.linalg.det(M)) < 1e-3:
            continue
        M /= M[2, 2]
        dst = warp_points(Homography(M), UNIT_SQUARE)
        H = estimate_homography(UNIT_SQUARE, dst)
        assert np.allclose(H.M, M, rtol=1e-6, atol=1e-9)


def test_homography_collinear_rejected():
    src = np.array([[0, 0], [1, 1], [2, 2], [0, 1.0]])
    with pytest.raises(DegenerateQuadError):
        estimate_homography(src, UNIT_SQUARE)


def test_random_quads_reproduce_correspondences():
    rng = np.random.default_rng(123)
    checked = 0
    while checked < 10_000:
        src = UNIT_SQUARE * 10 + rng.normal(scale=1.5, size=(4, 2))
        dst = UNIT_SQUARE * 8 + rng.normal(scale=1.5, size=(4, 2))
        try:
            H = estimate_homography(src, dst)
        except DegenerateQuadError:
            continue
        assert np.allclose(warp_points(H, src), dst, atol=1e-6)
        checked += 1


def test_warp_point_identity_and_corners():
    H = Homography(np.eye(3))
    assert np.allclose(warp_point(H, (3.5, -2.0)), (3.5, -2.0))
    skewed = np.array([[0, 0], [2, 0.3], [2.4, 2.2], [-0.2, 1.9]])
    H2 = estimate_homography(UNIT_SQUARE, skewed)
    for corner, target in zip(UNIT_SQUARE, skewed):
        assert np.allclose(warp_point(H2, corner), target, atol=1e-6)


def test_warp_point_perspective_midpoint():
    # perspective map keeps corners but bends the midpoint
    skewed = np.array([[0, 0], [4, 0], [3, 3], [1, 3.0]])
    H = estimate_homography(UNIT_SQUARE, skewed)
    mid = warp_point(H, (0.5, 0.5))
    assert not np.allclose(mid, skewed.mean(axis=0), atol=1e-3)
    # oracle: rational map evaluated by hand from the matrix entries
    M = H.M
    x, y = 0.5, 0.5
    den = M[2, 0] * x + M[2, 1] * y + M[2, 2]
    expect = ((M[0, 0] * x + M[0, 1] * y + M[0, 2]) / den,
              (M[1, 0] * x + M[1, 1] * y + M[1, 2]) / den)
    assert np.allclose(mid, expect, atol=1e-12)


def test_warp_point_at_infinity():
    # denominator x + 1 vanishes along x = -1
    H = Homography(np.array([[1, 0, 0], [0, 1, 0], [1, 0, 1.0]]))
    with pytest.raises(PointAtInfinityError):
        warp_point(H, (-1.0, 5.0))


def test_inverse_round_trip():
    rng = np.random.default_rng(5)
    M = np.eye(3) + rng.normal(scale=0.3, size=(3, 3))
    H = Homography(M)
    pts = rng.uniform(-5, 5, size=(40, 2))
    back = warp_points(H.inverse(), warp_points(H, pts))
    assert np.allclose(back, pts, atol=1e-9)


def test_composition_matches_sequential_warp():
    rng = np.random.default_rng(11)
    H1 = Homography(np.eye(3) + rng.normal(scale=0.2, size=(3, 3)))
    H2 = Homography(np.eye(3) + rng.normal(scale=0.2, size=(3, 3)))
    pts = rng.uniform(-3, 3, size=(25, 2))
    seq = warp_points(H2, warp_points(H1, pts))
    combined = warp_points(H2 @ H1, pts)
    assert np.allclose(seq, combined, atol=1e-9)


def test_canonical_scaling():
    H = Homography(np.eye(3) * 4.0)
    assert H.M[2, 2] == pytest.approx(1.0)
    assert np.allclose(H.M, np.eye(3))


def test_warp_image_identity_byte_exact():
    rng = np.random.default_rng(3)
    pixels = rng.integers(0, 256, size=(24, 31), dtype=np.uint8)
    img = LayerImage(pixels=pixels, scale=5.0)
    out = warp_image(img, Homography(np.eye(3)), (31, 24))
    assert np.array_equal(out.pixels, pixels)
    assert out.valid.all()


def test_warp_image_rotation_permutes_pixels():
    pixels = np.array([[10, 20], [30, 40]], dtype=np.uint8)
    img = LayerImage(pixels=pixels, scale=1.0)
    # 90 deg clockwise rotation about the raster center (0.5, 0.5)
    M = np.array([[0, -1, 1], [1, 0, 0], [0, 0, 1.0]])
    out = warp_image(img, Homography(M), (2, 2))
    assert np.array_equal(out.pixels, np.array([[30, 10], [40, 20]], dtype=np.uint8))
    assert out.valid.all()


def test_warp_image_round_trip_smooth():
    xs = np.linspace(0, 255, 64)
    pixels = np.clip(np.rint(xs[None, :] * 0.6 + xs[:, None] * 0.4), 0, 255).astype(np.uint8)
    img = LayerImage(pixels=pixels, scale=1.0)
    skew = np.array([[1.0, 0.08, 2.0], [0.02, 1.0, -1.0], [1e-4, -5e-5, 1.0]])
    H = Homography(skew)
    warped = warp_image(img, H, (64, 64))
    back = warp_image(warped, H.inverse(), (64, 64))
    both = back.valid & warped.valid
    interior = np.zeros_like(both)
    interior[8:-8, 8:-8] = True
    sel = both & interior
    assert sel.sum() > 500
    err = np.abs(back.pixels.astype(float) - pixels.astype(float))[sel]
    assert err.mean() < 2.0


def test_warp_image_marks_outside_invalid():
    img = LayerImage(pixels=np.full((10, 10), 200, dtype=np.uint8), scale=1.0)
    M = np.array([[1, 0, -8], [0, 1, 0], [0, 0, 1.0]])  # shift content left
    out = warp_image(img, Homography(M), (10, 10))
    assert not out.valid[:, 3:].any()
    assert out.valid[:, :2].all()


def marker_image(centers, radius=2.5, peak=250):
    pixels = np.full((120, 160), 20, dtype=np.uint8)
    ys, xs = np.mgrid[0:120, 0:160]
    for cx, cy in centers:
        disc = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2
        pixels[disc] = peak
    return LayerImage(pixels=pixels, scale=1.0)


MARKER_CENTERS = [(30.0, 25.0), (130.0, 27.0), (128.0, 95.0), (32.0, 93.0)]
MARKER_WINDOWS = [(10, 5, 50, 45), (110, 7, 150, 47), (108, 75, 148, 115), (12, 73, 52, 113)]


def test_detect_markers_disc_centroids():
    img = marker_image(MARKER_CENTERS)
    pts = detect_markers(img, MARKER_WINDOWS, 128)
    assert np.allclose(pts, MARKER_CENTERS, atol=0.5)


def test_detect_markers_all_black():
    img = LayerImage(pixels=np.zeros((120, 160), dtype=np.uint8), scale=1.0)
    with pytest.raises(MarkerMissingError) as err:
        detect_markers(img, MARKER_WINDOWS, 128)
    assert err.value.window_index == 0


def test_detect_markers_gaussian_peak():
    pixels = np.full((120, 160), 15, dtype=float)
    ys, xs = np.mgrid[0:120, 0:160]
    for cx, cy in MARKER_CENTERS:
        pixels += 240.0 * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * 2.0**2))
    img = LayerImage(pixels=np.clip(pixels, 0, 255).astype(np.uint8), scale=1.0)
    pts = detect_markers(img, MARKER_WINDOWS, 100)
    assert np.allclose(pts, MARKER_CENTERS, atol=0.25)


def test_detect_markers_ordering_follows_quadrants():
    img = marker_image(MARKER_CENTERS)
    shuffled = [MARKER_WINDOWS[2], MARKER_WINDOWS[0], MARKER_WINDOWS[3], MARKER_WINDOWS[1]]
    pts = detect_markers(img, shuffled, 128)
    assert np.allclose(pts, MARKER_CENTERS, atol=0.5)


def test_active_plane_matches_marker_fit():
    cam = tilted_camera()
    plane = ActivePlane(z=0.0, half_extent=45.0)
    scale = 6.67
    H = active_plane_homography(cam, plane, scale)
    markers_px = project_points(cam, plane.corners())
    H_fit = estimate_homography(markers_px, top_view_corners(45.0, scale))
    assert np.allclose(H.M, H_fit.M, atol=1e-6)


def test_active_plane_top_down_scaling():
    cam = down_camera(f=800.0, height=300.0)
    scale = 4.0
    H0 = active_plane_homography(cam, ActivePlane(z=0.0), scale)
    H10 = active_plane_homography(cam, ActivePlane(z=10.0), scale)
    # a camera ray hits the raised plane at (d - z)/d times its plane-0
    # world offset, so the two maps differ by that uniform scale about
    # the top-view image of the world origin
    pts = np.array([[150.0, 150.0], [400.0, 200.0], [260.0, 310.0]])
    moved = warp_points(H10, pts)
    ref = warp_points(H0, pts)
    center = warp_point(H0, project_point(cam, (0.0, 0.0, 0.0)))
    ratio = (moved - center) / (ref - center)
    expected = (300.0 - 10.0) / 300.0
    assert np.allclose(ratio, expected, atol=1e-9)


def test_active_plane_grazing_camera_errors():
    # camera at plane height looking along the plane: corners behind it
    K = np.array([[800.0, 0, 320], [0, 800.0, 240], [0, 0, 1]])
    R = np.array([[1.0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]])
    cam = CameraModel(K=K, R=R, t=np.array([0.0, 0.0, 0.0]), image_dims=(640, 480))
    with pytest.raises((BehindCameraError, DegenerateQuadError)):
        active_plane_homography(cam, ActivePlane(z=0.0), 6.67)


def test_camera_model_validation():
    with pytest.raises(GeometryError):
        CameraModel(K=np.eye(3), R=np.eye(3) * 2.0, t=np.zeros(3), image_dims=(10, 10))
    K_bad = np.array([[1.0, 0, 0], [0.5, 1.0, 0], [0, 0, 1.0]])
    with pytest.raises(GeometryError):
        CameraModel(K=K_bad, R=np.eye(3), t=np.zeros(3), image_dims=(10, 10))


def test_camera_json_round_trip(tmp_path):
    from layerlens.geometry import load_camera_json, save_camera_json

    cam = tilted_camera()
    path = tmp_path / "camera.json"
    save_camera_json(cam, path)
    back = load_camera_json(path)
    assert np.allclose(back.K, cam.K)
    assert np.allclose(back.R, cam.R)
    assert np.allclose(back.t, cam.t)
    assert back.image_dims == cam.image_dims
