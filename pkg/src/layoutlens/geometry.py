"""Equirectangular coordinate conversions, bilinear sampling, 2D rigid poses.

Conventions used throughout the package:

* Pixel centers. Column ``i`` maps to longitude ``u = (i + 0.5) / W * 2*pi``
  and row ``j`` to latitude ``v = (0.5 - (j + 0.5) / H) * pi``, so no pixel
  sits on a pole and ``tan(v)`` stays finite everywhere.
* Longitude wraps (the panorama is cyclic in ``u``); latitude clamps.
* World frame: x toward ``u = 0``, y toward ``u = pi/2``, z up. The camera
  sits at the origin of its own frame; poses are yaw + XY translation
  (constant camera height, zero roll/pitch).

Functions that participate in gradient paths accept either ndarrays or
autodiff ``Var`` nodes and are written against the ops in
:mod:`layoutlens.autodiff`, which fall through to plain numpy for ndarray
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import DegenerateDirectionError

TAU = 2.0 * np.pi


def column_longitudes(width: int) -> np.ndarray:
    """Longitude of every pixel-column center, shape (W,), in [0, 2*pi)."""
    return (np.arange(width) + 0.5) / width * TAU


def row_latitudes(height: int) -> np.ndarray:
    """Latitude of every pixel-row center, shape (H,), descending from the top."""
    return (0.5 - (np.arange(height) + 0.5) / height) * np.pi


@lru_cache(maxsize=32)
def pixel_center_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """(U, V) longitude/latitude grids of shape (H, W); cached per size."""
    u = column_longitudes(width)
    v = row_latitudes(height)
    U = np.broadcast_to(u[None, :], (height, width)).copy()
    V = np.broadcast_to(v[:, None], (height, width)).copy()
    U.setflags(write=False)
    V.setflags(write=False)
    return U, V


def pixel_to_uv(j, i, height: int, width: int):
    """UV coordinates of pixel centers (j, i). Raises IndexError out of range."""
    j = np.asarray(j)
    i = np.asarray(i)
    if np.any(j < 0) or np.any(j >= height) or np.any(i < 0) or np.any(i >= width):
        raise IndexError(
            f"pixel index out of range for {height}x{width} grid")
    u = (i + 0.5) / width * TAU
    v = (0.5 - (j + 0.5) / height) * np.pi
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


def uv_to_pixel(u, v, height: int, width: int):
    """Continuous pixel coordinates for UV; col wraps mod W, row clamps.

    The map is the inverse of :func:`pixel_to_uv` up to float rounding
    (within a couple of ulp, see the round-trip tests). Accepts Var inputs;
    the wrap offset is a piecewise-constant shift so gradients pass through.
    """
    col = ad.mul(u, width / TAU)
    col = ad.sub(col, 0.5)
    wrap = np.floor((ad.value(col) + 0.5) / width) * width
    col = ad.sub(col, wrap)
    row = ad.sub(ad.mul(v, -height / np.pi), 0.5 - 0.5 * height)
    row = ad.minimum(ad.maximum(row, -0.5), height - 0.5)
    if not ad.is_var(row) and np.ndim(row) == 0:
        return float(row), float(col)
    return row, col


def equ_proj(p):
    """Equirectangular projection of 3D points, shape (..., 3) -> (u, v).

    ``u = atan2(py, px) mod 2*pi`` and ``v = atan(pz / hypot(px, py))``.
    Points on the vertical axis have no longitude and raise
    DegenerateDirectionError; the warp path handles them per pixel instead.
    """
    p = np.asarray(p, dtype=np.float64)
    px, py, pz = p[..., 0], p[..., 1], p[..., 2]
    rho = np.hypot(px, py)
    if np.any(rho < 1e-300):
        raise DegenerateDirectionError(
            "point on the vertical axis through the camera")
    u = np.arctan2(py, px) % TAU
    v = np.arctan(pz / rho)
    if p.ndim == 1:
        return float(u), float(v)
    return u, v


def direction_from_uv(u, v):
    """Unnormalized ray direction [cos u, sin u, tan v] for UV coordinates."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return np.stack([np.cos(u), np.sin(u), np.tan(v)], axis=-1)


def _bilinear_cells(row_val: np.ndarray, col_val: np.ndarray,
                    height: int, width: int):
    """Integer corner indices and fractional offsets for bilinear sampling.

    Columns wrap modulo W; rows clamp, which extends the top/bottom rows
    outward with zero vertical derivative there.
    """
    r0f = np.floor(row_val)
    c0f = np.floor(col_val)
    fr = row_val - r0f
    fc = col_val - c0f
    r0 = np.clip(r0f.astype(np.int64), 0, height - 1)
    r1 = np.clip(r0f.astype(np.int64) + 1, 0, height - 1)
    c0 = c0f.astype(np.int64) % width
    c1 = (c0f.astype(np.int64) + 1) % width
    return r0, r1, c0, c1, fr, fc


def bilinear_sample(img: np.ndarray, row, col):
    """Sample an (H, W, C) image at continuous coordinates.

    Returns ``(color, d_row, d_col)`` where the derivative arrays are the
    exact piecewise-bilinear partials of the sampled color with respect to
    the row/col coordinates, each shaped like ``color``.
    """
    img = np.asarray(img, dtype=np.float64)
    height, width = img.shape[0], img.shape[1]
    row = np.asarray(row, dtype=np.float64)
    col = np.asarray(col, dtype=np.float64)
    scalar = row.ndim == 0 and col.ndim == 0
    row, col = np.broadcast_arrays(np.atleast_1d(row), np.atleast_1d(col))
    r0, r1, c0, c1, fr, fc = _bilinear_cells(row, col, height, width)

    i00 = img[r0, c0]
    i01 = img[r0, c1]
    i10 = img[r1, c0]
    i11 = img[r1, c1]
    fr_ = fr[..., None]
    fc_ = fc[..., None]
    top = i00 * (1.0 - fc_) + i01 * fc_
    bot = i10 * (1.0 - fc_) + i11 * fc_
    color = top * (1.0 - fr_) + bot * fr_
    d_row = bot - top
    d_col = (i01 - i00) * (1.0 - fr_) + (i11 - i10) * fr_
    if scalar:
        return color[0], d_row[0], d_col[0]
    return color, d_row, d_col


def sample_channels(img: np.ndarray, row, col):
    """Bilinear sampling that keeps the gradient path through (row, col).

    ``row``/``col`` may be Var nodes of any common shape; returns a list of
    per-channel samples (Var or ndarray). The corner indices come from the
    forward values, so the gradient is the in-cell bilinear derivative.
    """
    img = np.asarray(img, dtype=np.float64)
    height, width = img.shape[0], img.shape[1]
    rv = ad.value(row)
    cv = ad.value(col)
    r0, r1, c0, c1, _, _ = _bilinear_cells(rv, cv, height, width)
    fr = ad.sub(row, np.floor(rv))
    fc = ad.sub(col, np.floor(cv))
    one_m_fr = ad.sub(1.0, fr)
    one_m_fc = ad.sub(1.0, fc)
    w00 = ad.mul(one_m_fr, one_m_fc)
    w01 = ad.mul(one_m_fr, fc)
    w10 = ad.mul(fr, one_m_fc)
    w11 = ad.mul(fr, fc)
    out = []
    for ch in range(img.shape[2]):
        plane = img[..., ch]
        s = ad.add(
            ad.add(ad.mul(w00, plane[r0, c0]), ad.mul(w01, plane[r0, c1])),
            ad.add(ad.mul(w10, plane[r1, c0]), ad.mul(w11, plane[r1, c1])),
        )
        out.append(s)
    return out


def sample_nearest(plane: np.ndarray, row_val: np.ndarray, col_val: np.ndarray):
    """Nearest-neighbor lookup with wrap/clamp; used for masks."""
    plane = np.asarray(plane)
    height, width = plane.shape[0], plane.shape[1]
    r = np.clip(np.round(row_val).astype(np.int64), 0, height - 1)
    c = np.round(col_val).astype(np.int64) % width
    return plane[r, c]


@dataclass(frozen=True)
class RigidPose2D:
    """Yaw + XY translation; maps points from this frame to the parent frame."""

    tx: float = 0.0
    ty: float = 0.0
    yaw: float = 0.0

    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return np.array([[c, -s], [s, c]])

    def compose(self, other: "RigidPose2D") -> "RigidPose2D":
        """self applied after other: (self o other)(p) = self(other(p))."""
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        tx = self.tx + c * other.tx - s * other.ty
        ty = self.ty + s * other.tx + c * other.ty
        return RigidPose2D(tx, ty, self.yaw + other.yaw)

    def inverse(self) -> "RigidPose2D":
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return RigidPose2D(-(c * self.tx + s * self.ty),
                           -(-s * self.tx + c * self.ty), -self.yaw)

    def scaled(self, factor: float) -> "RigidPose2D":
        """Same rotation with the translation rescaled (metric <-> layout units)."""
        return RigidPose2D(self.tx * factor, self.ty * factor, self.yaw)


def transform_point(pose: RigidPose2D, p):
    """Apply the pose to 3D points (..., 3): rotate XY by yaw, add t, keep z."""
    p = np.asarray(p, dtype=np.float64)
    c, s = np.cos(pose.yaw), np.sin(pose.yaw)
    x = c * p[..., 0] - s * p[..., 1] + pose.tx
    y = s * p[..., 0] + c * p[..., 1] + pose.ty
    return np.stack([x, y, p[..., 2]], axis=-1)


def relative_pose(world_from_src: RigidPose2D,
                  world_from_tgt: RigidPose2D) -> RigidPose2D:
    """Pose mapping target-frame points into the source frame."""
    return world_from_src.inverse().compose(world_from_tgt)


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check the (H, W, C) intensity-grid invariants and return float64 data."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"image must be (H, W, C), got shape {img.shape}")
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError("image must be at least 2x2")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite intensities")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("intensities must lie in [0, 1]")
    return img
