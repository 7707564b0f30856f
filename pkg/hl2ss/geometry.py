r"""Calibration-driven geometry.

Transforms are 4x4 row-major matrices acting on column vectors,
``p' = T (p, 1)``. The VLC and depth cameras are described only by their
uv2xy tables; projecting into them inverts the table numerically with
:class:`LutInverse`. The PV camera uses a pinhole model with
Brown-Conrady distortion (radial ``k1, k2, k3``, tangential ``p1, p2``).
"""

from __future__ import annotations

import cv2
import numpy as np
from dataclasses import dataclass
from scipy.spatial import cKDTree
from typing import Optional, Tuple, Union

from hl2ss.calibration import DepthCalibration, PvCalibration, VlcCalibration
from hl2ss.codecs import DepthAbImage
from hl2ss.errors import ValidationError
from hl2ss.utils import as_matrix4

LutCalibration = Union[VlcCalibration, DepthCalibration]


@dataclass(frozen=True, eq=False)
class PointCloud:
    r"""Points in meters, with optional per-point colors.

    Attributes:
        points: N x 3 float32
        colors: N x 3 uint8, or ``None``
    """

    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        object.__setattr__(self, "points", points)
        if self.colors is not None:
            colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(colors) != len(points):
                raise ValidationError(f"{len(colors)} colors for {len(points)} points")
            object.__setattr__(self, "colors", colors)

    def __len__(self) -> int:
        return len(self.points)


# ------------------------------------------------------------------ transforms


def compose(*transforms: np.ndarray) -> np.ndarray:
    r"""``compose(A, B, C)`` is ``A @ B @ C``: apply ``C`` first."""
    result = np.eye(4)
    for t in transforms:
        result = result @ as_matrix4(t).astype(np.float64)
    return result.astype(np.float32)


def invert_rigid(t: np.ndarray) -> np.ndarray:
    t = as_matrix4(t).astype(np.float64)
    inverse = np.eye(4)
    inverse[:3, :3] = t[:3, :3].T
    inverse[:3, 3] = -t[:3, :3].T @ t[:3, 3]
    return inverse.astype(np.float32)


def is_rigid(t: np.ndarray, tol: float = 1e-4) -> bool:
    r"""Whether ``t`` has an orthonormal rotation block and last row
    ``(0, 0, 0, 1)``."""
    t = as_matrix4(t).astype(np.float64)
    r = t[:3, :3]
    return bool(
        np.allclose(r @ r.T, np.eye(3), atol=tol)
        and np.allclose(t[3], (0, 0, 0, 1), atol=tol)
    )


def apply_transform(points: np.ndarray, t: np.ndarray) -> np.ndarray:
    t = as_matrix4(t).astype(np.float64)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return points @ t[:3, :3].T + t[:3, 3]


def transform_points(pc: PointCloud, t: np.ndarray) -> PointCloud:
    r"""Map every point ``p`` to ``T (p, 1)``."""
    return PointCloud(apply_transform(pc.points, t), pc.colors)


# --------------------------------------------------------------- depth to 3D


def _depth_rays(img: DepthAbImage, cal: DepthCalibration) -> Tuple[np.ndarray, np.ndarray]:
    if img.depth.shape != cal.uv2xy.shape[:2]:
        raise ValidationError(
            f"depth image {img.depth.shape} does not match uv2xy {cal.uv2xy.shape[:2]}"
        )
    if not cal.scale > 0:
        raise ValidationError(f"depth scale must be positive, got {cal.scale}")
    v, u = np.nonzero(img.depth)
    z = img.depth[v, u].astype(np.float64) / cal.scale
    xy = cal.uv2xy[v, u].astype(np.float64)
    points = np.column_stack((xy[:, 0] * z, xy[:, 1] * z, z))
    return points, np.column_stack((u, v))


def depth_to_points(img: DepthAbImage, cal: DepthCalibration) -> PointCloud:
    r"""Unproject every pixel with nonzero depth into the depth sensor's
    frame; zero-depth pixels produce no point.

    Raises:
        ValidationError: image and calibration sizes differ
    """
    points, _ = _depth_rays(img, cal)
    return PointCloud(points)


# -------------------------------------------------------------------- PV model


def distort(xy: np.ndarray, cal: PvCalibration) -> np.ndarray:
    r"""Apply Brown-Conrady distortion to unit-plane coordinates."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    k1, k2, k3 = cal.radial.astype(np.float64)
    p1, p2 = cal.tangential.astype(np.float64)
    x, y = xy[:, 0], xy[:, 1]
    r2 = x * x + y * y
    radial = 1 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return np.column_stack((xd, yd))


def project_pv_points(points: np.ndarray, cal: PvCalibration) -> np.ndarray:
    r"""Project N x 3 camera-frame points to N x 2 PV pixel coordinates.

    Raises:
        ValidationError: a point has ``z <= 0``
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if np.any(points[:, 2] <= 0):
        raise ValidationError("cannot project points at or behind the camera (z <= 0)")
    xd = distort(points[:, :2] / points[:, 2:3], cal)
    return xd * cal.focal.astype(np.float64) + cal.principal.astype(np.float64)


def project_pv(point, cal: PvCalibration) -> np.ndarray:
    r"""Pixel ``(u, v)`` of one camera-frame point."""
    return project_pv_points(point, cal)[0]


def unproject_pv(pixels: np.ndarray, cal: PvCalibration, iterations: int = 20) -> np.ndarray:
    r"""Inverse of the PV projection up to depth: N x 2 pixels to N x 2
    unit-plane coordinates, by fixed-point iteration on the distortion
    model."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    xd = (pixels - cal.principal.astype(np.float64)) / cal.focal.astype(np.float64)
    xy = xd.copy()
    k1, k2, k3 = cal.radial.astype(np.float64)
    p1, p2 = cal.tangential.astype(np.float64)
    for _ in range(iterations):
        x, y = xy[:, 0], xy[:, 1]
        r2 = x * x + y * y
        radial = 1 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
        dy = p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
        xy = np.column_stack(((xd[:, 0] - dx) / radial, (xd[:, 1] - dy) / radial))
    return xy


# -------------------------------------------------------------- LUT inversion


class LutInverse:
    r"""Maps unit-plane coordinates back to pixel coordinates of a
    LUT-calibrated camera.

    A k-d tree over the table finds the nearest pixel; Newton steps on the
    bilinear interpolation of the table then refine it to subpixel
    precision. Points the table does not cover map to NaN.

    Args:
        uv2xy: H x W x 2 image-to-unit-plane table
        iterations: Newton steps
    """

    def __init__(self, uv2xy: np.ndarray, iterations: int = 5):
        self.lut = np.asarray(uv2xy, dtype=np.float64)
        if self.lut.ndim != 3 or self.lut.shape[2] != 2 or min(self.lut.shape[:2]) < 2:
            raise ValidationError(f"uv2xy must be H x W x 2, got {self.lut.shape}")
        self.height, self.width = self.lut.shape[:2]
        self.iterations = iterations
        self.tree = cKDTree(self.lut.reshape(-1, 2))
        spacing = np.abs(np.diff(self.lut, axis=1)).max()
        self.tolerance = 1e-3 * spacing

    def _cell(self, u, v):
        u0 = np.clip(np.floor(u), 0, self.width - 2).astype(np.intp)
        v0 = np.clip(np.floor(v), 0, self.height - 2).astype(np.intp)
        return u0, v0, (u - u0)[:, None], (v - v0)[:, None]

    def sample(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        r"""Bilinear interpolation of the table, extrapolating linearly past
        the border."""
        u0, v0, fu, fv = self._cell(np.asarray(u, np.float64), np.asarray(v, np.float64))
        lut = self.lut
        top = lut[v0, u0] * (1 - fu) + lut[v0, u0 + 1] * fu
        bottom = lut[v0 + 1, u0] * (1 - fu) + lut[v0 + 1, u0 + 1] * fu
        return top * (1 - fv) + bottom * fv

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        r"""N x 2 unit-plane points to N x 2 pixel coordinates ``(u, v)``."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        _, index = self.tree.query(xy)
        v, u = np.divmod(index, self.width)
        u = u.astype(np.float64)
        v = v.astype(np.float64)
        lut = self.lut
        for _ in range(self.iterations):
            u0, v0, fu, fv = self._cell(u, v)
            du_top = lut[v0, u0 + 1] - lut[v0, u0]
            du_bottom = lut[v0 + 1, u0 + 1] - lut[v0 + 1, u0]
            dv_left = lut[v0 + 1, u0] - lut[v0, u0]
            dv_right = lut[v0 + 1, u0 + 1] - lut[v0, u0 + 1]
            j_u = du_top * (1 - fv) + du_bottom * fv
            j_v = dv_left * (1 - fu) + dv_right * fu
            r = xy - self.sample(u, v)
            det = j_u[:, 0] * j_v[:, 1] - j_v[:, 0] * j_u[:, 1]
            with np.errstate(divide="ignore", invalid="ignore"):
                step_u = (j_v[:, 1] * r[:, 0] - j_v[:, 0] * r[:, 1]) / det
                step_v = (-j_u[:, 1] * r[:, 0] + j_u[:, 0] * r[:, 1]) / det
            u = u + step_u
            v = v + step_v
        residual = np.linalg.norm(xy - self.sample(u, v), axis=1)
        inside = (
            (u >= -0.5) & (u <= self.width - 0.5) & (v >= -0.5) & (v <= self.height - 0.5)
        )
        ok = inside & (residual <= self.tolerance) & np.isfinite(u) & np.isfinite(v)
        out = np.column_stack((u, v))
        out[~ok] = np.nan
        return out


def project_lut_points(points: np.ndarray, inverse: LutInverse) -> np.ndarray:
    r"""Project camera-frame points into a LUT-calibrated camera. Points
    with ``z <= 0`` or outside the table map to NaN."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.full((len(points), 2), np.nan)
    front = points[:, 2] > 0
    if np.any(front):
        out[front] = inverse(points[front, :2] / points[front, 2:3])
    return out


# ---------------------------------------------------------------- alignment


def zbuffer(pixels: np.ndarray, z: np.ndarray, shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    r"""Resolve collisions of integer pixel positions, keeping the nearest
    point per pixel.

    Args:
        pixels: N x 2 integer ``(u, v)``
        z: N depths
        shape: ``(height, width)`` of the target image

    Returns:
        flat pixel indices and the winning depth for each
    """
    flat = pixels[:, 1] * shape[1] + pixels[:, 0]
    order = np.lexsort((z, flat))
    flat, z = flat[order], z[order]
    first = np.unique(flat, return_index=True)[1]
    return flat[first], z[first]


def align_depth_to_color(
    img: DepthAbImage,
    depth_cal: DepthCalibration,
    color_cal: Union[PvCalibration, LutCalibration, None],
    extrinsic_chain: np.ndarray,
    color_shape: Optional[Tuple[int, int]] = None,
    inverse: Optional[LutInverse] = None,
) -> np.ndarray:
    r"""Render the depth image from the color camera's viewpoint.

    Each valid depth pixel is unprojected, moved into the color camera frame
    with ``extrinsic_chain`` and projected into the color image. Where
    several land on one pixel the nearest wins. Values are the depth along
    the color camera's axis, in the depth calibration's units; pixels that
    receive nothing are 0.

    Args:
        img: depth image
        depth_cal: depth calibration
        color_cal: PV intrinsics, or the calibration of a LUT camera
        extrinsic_chain: depth sensor frame to color sensor frame
        color_shape: ``(height, width)`` of the color image; required for
            PV, taken from the table for LUT cameras
        inverse: prebuilt :class:`LutInverse` for ``color_cal``

    Raises:
        ValidationError: missing calibration or color image size
    """
    if depth_cal is None or color_cal is None:
        raise ValidationError("alignment needs both depth and color calibrations")
    if isinstance(color_cal, PvCalibration):
        if color_shape is None:
            raise ValidationError("color_shape is required to align into a PV image")
    else:
        color_shape = color_cal.uv2xy.shape[:2]
    points, _ = _depth_rays(img, depth_cal)
    points = apply_transform(points, extrinsic_chain)
    points = points[points[:, 2] > 0]
    if isinstance(color_cal, PvCalibration):
        pixels = project_pv_points(points, color_cal)
    else:
        pixels = project_lut_points(points, inverse or LutInverse(color_cal.uv2xy))
    pixels = np.rint(pixels)
    height, width = color_shape
    keep = (
        np.isfinite(pixels).all(axis=1)
        & (pixels[:, 0] >= 0) & (pixels[:, 0] < width)
        & (pixels[:, 1] >= 0) & (pixels[:, 1] < height)
    )
    flat, z = zbuffer(pixels[keep].astype(np.intp), points[keep, 2], color_shape)
    aligned = np.zeros(height * width, dtype=np.uint16)
    aligned[flat] = np.clip(np.rint(z * depth_cal.scale), 0, np.iinfo(np.uint16).max)
    return aligned.reshape(color_shape)


# -------------------------------------------------------------- undistortion


def _check_intrinsics(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if k.shape != (3, 3):
        raise ValidationError(f"intrinsics must be 3x3, got {k.shape}")
    if not np.all(np.isfinite(k)) or k[0, 0] == 0 or k[1, 1] == 0:
        raise ValidationError(f"degenerate intrinsics:\n{k}")
    return k


def undistort_maps(
    uv2xy: np.ndarray,
    intrinsics: np.ndarray,
    size: Optional[Tuple[int, int]] = None,
    inverse: Optional[LutInverse] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    r"""``cv2.remap`` maps that resample a LUT camera's image as seen by an
    ideal pinhole camera.

    Args:
        uv2xy: source camera's table
        intrinsics: 3x3 target camera matrix
        size: ``(width, height)`` of the output, default the source size
        inverse: prebuilt :class:`LutInverse` for ``uv2xy``

    Returns:
        float32 ``map_x``, ``map_y``; uncovered pixels map to -1
    """
    k = _check_intrinsics(intrinsics)
    inverse = inverse or LutInverse(uv2xy)
    width, height = size or (inverse.width, inverse.height)
    u, v = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    x = (u - k[0, 2]) / k[0, 0]
    y = (v - k[1, 2]) / k[1, 1]
    source = inverse(np.column_stack((x.ravel(), y.ravel())))
    source[~np.isfinite(source)] = -1
    map_x = source[:, 0].reshape(height, width).astype(np.float32)
    map_y = source[:, 1].reshape(height, width).astype(np.float32)
    return map_x, map_y


def undistort_via_lut(
    image: np.ndarray,
    cal: Union[LutCalibration, np.ndarray],
    intrinsics: np.ndarray,
    interpolation: int = cv2.INTER_LINEAR,
) -> np.ndarray:
    r"""Resample ``image`` from a LUT camera to an ideal pinhole camera
    with ``intrinsics``. Samples outside the source are 0.

    Raises:
        ValidationError: table and image sizes differ, or degenerate
            intrinsics
    """
    uv2xy = cal if isinstance(cal, np.ndarray) else cal.uv2xy
    image = np.asarray(image)
    if image.shape[:2] != uv2xy.shape[:2]:
        raise ValidationError(
            f"image {image.shape[:2]} does not match uv2xy {uv2xy.shape[:2]}"
        )
    map_x, map_y = undistort_maps(uv2xy, intrinsics)
    return cv2.remap(
        image, map_x, map_y, interpolation, borderMode=cv2.BORDER_CONSTANT, borderValue=0
    )
