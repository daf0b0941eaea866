"""Calibrated pinhole camera and planar projective transforms.

Projects world points through K·[R|t], estimates exact 4-point
homographies, warps images by inverse-mapped bilinear resampling, finds
calibration markers, and builds the per-layer map from camera pixels to
a metric virtual top view of the active printing plane.

Pixel convention: (x, y) = (column, row), origin at the top-left pixel
center.  World units are millimetres throughout.
"""

import json
from dataclasses import dataclass

import numpy as np

from .rasterref import LayerImage


class GeometryError(ValueError):
    pass


class BehindCameraError(GeometryError):
    pass


class DegenerateQuadError(GeometryError):
    pass


class PointAtInfinityError(GeometryError):
    pass


class MarkerMissingError(GeometryError):
    def __init__(self, window_index):
        super().__init__(f"no marker pixels above threshold in window {window_index}")
        self.window_index = window_index


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics K (px), world-to-camera rotation R, translation t (mm)."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    image_dims: tuple

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float).reshape(3, 3)
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise GeometryError("R is not orthonormal")
        if np.any(np.abs(K[np.tril_indices(3, -1)]) > 0):
            raise GeometryError("K must be upper-triangular")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise GeometryError("focal entries must be positive")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "image_dims",
                           (int(self.image_dims[0]), int(self.image_dims[1])))

    def to_dict(self):
        return {
            "K": [float(v) for v in self.K.ravel()],
            "R": [float(v) for v in self.R.ravel()],
            "t": [float(v) for v in self.t],
            "image_dims": list(self.image_dims),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(K=np.array(data["K"], dtype=float).reshape(3, 3),
                   R=np.array(data["R"], dtype=float).reshape(3, 3),
                   t=np.array(data["t"], dtype=float),
                   image_dims=tuple(data["image_dims"]))


@dataclass(frozen=True)
class ActivePlane:
    """Horizontal world plane of the layer being printed."""

    z: float
    half_extent: float = 45.0
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.half_extent > 0:
            raise GeometryError("half_extent must be positive")

    def corners(self):
        """World corners ordered TL, TR, BR, BL in the raster sense."""
        cx, cy = self.origin
        h = self.half_extent
        return np.array([
            [cx - h, cy - h, self.z],
            [cx + h, cy - h, self.z],
            [cx + h, cy + h, self.z],
            [cx - h, cy + h, self.z],
        ])


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, stored at canonical scale."""

    M: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float).reshape(3, 3).copy()
        if abs(np.linalg.det(M)) < 1e-15 * max(np.linalg.norm(M) ** 3, 1.0):
            raise DegenerateQuadError("homography matrix is singular")
        if abs(M[2, 2]) > 1e-12 * np.linalg.norm(M):
            M = M / M[2, 2]
        else:
            M = M / np.linalg.norm(M)
            flat = M.ravel()
            lead = flat[np.argmax(np.abs(flat))]
            if lead < 0:
                M = -M
        object.__setattr__(self, "M", M)

    def inverse(self):
        return Homography(np.linalg.inv(self.M))

    def compose(self, inner):
        """self ∘ inner: apply inner first."""
        return Homography(self.M @ inner.M)

    def __matmul__(self, inner):
        return self.compose(inner)

    def to_list(self):
        return [float(v) for v in self.M.ravel()]

    @classmethod
    def from_list(cls, values):
        return cls(np.array(values, dtype=float).reshape(3, 3))


def project_points(cam, X):
    """Project Nx3 world points to Nx2 pixels; raises behind the camera."""
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    cam_pts = X @ cam.R.T + cam.t
    depth = cam_pts[:, 2]
    if np.any(depth <= 0):
        raise BehindCameraError("point has non-positive depth")
    proj = cam_pts @ cam.K.T
    return proj[:, :2] / proj[:, 2:3]


def project_point(cam, X):
    return project_points(cam, np.asarray(X, dtype=float).reshape(1, 3))[0]


def _check_non_collinear(pts, label):
    pts = np.asarray(pts, dtype=float)
    span = max(float(np.ptp(pts[:, 0])), float(np.ptp(pts[:, 1])), 1.0)
    for skip in range(4):
        tri = np.delete(pts, skip, axis=0)
        u = tri[1] - tri[0]
        v = tri[2] - tri[0]
        area2 = abs(u[0] * v[1] - u[1] * v[0])
        if area2 <= 1e-9 * span * span:
            raise DegenerateQuadError(f"three {label} points are collinear")


def estimate_homography(src, dst):
    """Exact homography from 4 point correspondences (8x8 linear solve)."""
    src = np.asarray(src, dtype=float).reshape(4, 2)
    dst = np.asarray(dst, dtype=float).reshape(4, 2)
    _check_non_collinear(src, "source")
    _check_non_collinear(dst, "destination")

    A = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        A[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        A[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v

    try:
        h = np.linalg.solve(A, b)
        M = np.array([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
    except np.linalg.LinAlgError:
        # m33 = 0 case: fall back to the homogeneous 8x9 null space
        rows = np.zeros((8, 9))
        for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
            rows[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y, -u]
            rows[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y, -v]
        _, s, vh = np.linalg.svd(rows)
        if s[-1] > 1e-8 * s[0]:
            raise DegenerateQuadError("correspondences admit no exact homography")
        M = vh[-1].reshape(3, 3)
    return Homography(M)


def warp_points(H, pts):
    """Apply the rational projective map to Nx2 points."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    ones = np.ones((pts.shape[0], 1))
    hom = np.hstack([pts, ones]) @ H.M.T
    w = hom[:, 2]
    if np.any(np.abs(w) < 1e-12):
        raise PointAtInfinityError("point maps to infinity (zero denominator)")
    return hom[:, :2] / w[:, None]


def warp_point(H, p):
    return warp_points(H, np.asarray(p, dtype=float).reshape(1, 2))[0]


def warp_image(img, H, out_dims, *, out_scale=None, out_origin=None):
    """Resample img under H by inverse mapping with bilinear interpolation.

    Output pixel (x, y) samples the source at H⁻¹·(x, y).  Pixels whose
    preimage falls outside the source (or on invalid source pixels) are
    flagged invalid.  The output frame metadata defaults to the source's.
    """
    out_w, out_h = int(out_dims[0]), int(out_dims[1])
    Minv = H.inverse().M
    xs = np.arange(out_w, dtype=float)
    ys = np.arange(out_h, dtype=float)
    X, Y = np.meshgrid(xs, ys)

    denom = Minv[2, 0] * X + Minv[2, 1] * Y + Minv[2, 2]
    finite = np.abs(denom) > 1e-12
    safe = np.where(finite, denom, 1.0)
    sx = (Minv[0, 0] * X + Minv[0, 1] * Y + Minv[0, 2]) / safe
    sy = (Minv[1, 0] * X + Minv[1, 1] * Y + Minv[1, 2]) / safe

    src_h, src_w = img.pixels.shape
    in_bounds = finite & (sx >= 0) & (sx <= src_w - 1) & (sy >= 0) & (sy <= src_h - 1)

    x0 = np.clip(np.floor(sx), 0, src_w - 1)
    y0 = np.clip(np.floor(sy), 0, src_h - 1)
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)
    x0 = x0.astype(int)
    y0 = y0.astype(int)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)

    pix = img.pixels.astype(float)
    v00 = pix[y0, x0]
    v01 = pix[y0, x1]
    v10 = pix[y1, x0]
    v11 = pix[y1, x1]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    values = top * (1 - fy) + bot * fy

    valid = in_bounds
    if img.valid is not None:
        src_ok = img.valid
        valid = valid & src_ok[y0, x0] & src_ok[y0, x1] & src_ok[y1, x0] & src_ok[y1, x1]

    pixels = np.clip(np.rint(np.where(in_bounds, values, 0.0)), 0, 255).astype(np.uint8)
    return LayerImage(
        pixels=pixels,
        scale=img.scale if out_scale is None else out_scale,
        origin=img.origin if out_origin is None else out_origin,
        valid=valid,
    )


def detect_markers(img, windows, intensity_threshold):
    """Intensity-weighted marker centroids, ordered TL, TR, BR, BL.

    windows: four (x0, y0, x1, y1) pixel rectangles, half-open, each
    expected to contain one bright marker.
    """
    windows = [tuple(int(v) for v in w) for w in windows]
    if len(windows) != 4:
        raise GeometryError("exactly four marker windows required")
    src_h, src_w = img.pixels.shape
    centroids = []
    for idx, (x0, y0, x1, y1) in enumerate(windows):
        if not (0 <= x0 < x1 <= src_w and 0 <= y0 < y1 <= src_h):
            raise GeometryError(f"window {idx} lies outside the image")
        sub = img.pixels[y0:y1, x0:x1].astype(float)
        hot = sub > intensity_threshold
        if not hot.any():
            raise MarkerMissingError(idx)
        weights = np.where(hot, sub, 0.0)
        total = weights.sum()
        ys, xs = np.mgrid[y0:y1, x0:x1]
        centroids.append(((weights * xs).sum() / total, (weights * ys).sum() / total))

    centers = np.array([((w[0] + w[2]) / 2.0, (w[1] + w[3]) / 2.0) for w in windows])
    mean = centers.mean(axis=0)
    ordered = [None] * 4
    quadrant_of = {(-1, -1): 0, (1, -1): 1, (1, 1): 2, (-1, 1): 3}
    for centroid, center in zip(centroids, centers):
        sx = np.sign(center[0] - mean[0])
        sy = np.sign(center[1] - mean[1])
        quad = quadrant_of.get((int(sx), int(sy)))
        if quad is None or ordered[quad] is not None:
            raise GeometryError("marker windows do not form four distinct quadrants")
        ordered[quad] = centroid
    return np.array(ordered)


def top_view_corners(half_extent, out_scale):
    """Pixel corners of the metric top-view square, TL, TR, BR, BL."""
    side = 2.0 * half_extent * out_scale
    return np.array([[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]])


def active_plane_homography(cam, plane, out_scale):
    """Camera pixels of the plane at height z → metric top-view pixels.

    The top-view frame has scale out_scale px/mm and its pixel (0,0) at
    world (origin - half_extent) in both axes, so every layer lands in
    the same raster frame regardless of its height.
    """
    src = project_points(cam, plane.corners())
    dst = top_view_corners(plane.half_extent, out_scale)
    return estimate_homography(src, dst)


def save_camera_json(cam, path):
    from .util import atomic_write_json

    atomic_write_json(path, cam.to_dict())


def load_camera_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        return CameraModel.from_dict(json.load(handle))
