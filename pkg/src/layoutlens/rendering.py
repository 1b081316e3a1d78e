"""Per-pixel layout rendering and differentiable view warping.

Every pixel ray is intersected with the layout surface implied by the
per-column boundary angles: four segments per column (ceiling, upper wall,
lower wall, floor) separated by the ceiling boundary, the horizon, and the
floor boundary. The planar distance ``d`` of wall pixels depends on the
column's boundary angles, so a panorama warped through these points is
differentiable with respect to the layout; floor and ceiling pixels depend
only on the plane heights and carry no boundary gradient while heights are
held constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .geometry import (RigidPose2D, pixel_center_grid, sample_channels,
                       sample_nearest, uv_to_pixel, validate_image)
from .layout import LayoutBoundaries, LayoutHeights, infer_ceiling_height

SEG_CEILING = 0
SEG_UPPER_WALL = 1
SEG_LOWER_WALL = 2
SEG_FLOOR = 3
SEGMENT_NAMES = {SEG_CEILING: "ceiling", SEG_UPPER_WALL: "upper-wall",
                 SEG_LOWER_WALL: "lower-wall", SEG_FLOOR: "floor"}


@dataclass
class Panorama:
    """Equirectangular RGB image plus validity mask (tripod exclusion)."""

    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.image = validate_image(self.image)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError("mask shape must match image height/width")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass
class PointCloudGrid:
    """Planar distances, 3D points, and segment labels for every pixel."""

    d: object
    p: object
    segment: np.ndarray


@lru_cache(maxsize=16)
def _grid_trig(height: int, width: int):
    U, V = pixel_center_grid(height, width)
    arrs = (np.cos(U), np.sin(U), np.tan(V), np.cos(V) / np.sin(V))
    for a in arrs:
        a.setflags(write=False)
    return arrs


def resolve_heights(b: LayoutBoundaries, heights: LayoutHeights | None):
    """(z_floor, z_ceil) with the ceiling inferred from ``b`` when absent."""
    if heights is None:
        return -1.0, infer_ceiling_height(b)
    return heights.z_floor, heights.z_ceil


def segment_masks(phi_floor_val: np.ndarray, phi_ceil_val: np.ndarray,
                  height: int, width: int):
    """Boolean per-pixel masks of the four column segments.

    A pixel whose latitude equals a boundary exactly is assigned to the
    wall side, which maximizes the number of gradient-carrying pixels.
    """
    _, V = pixel_center_grid(height, width)
    ceil_m = V > phi_ceil_val[None, :]
    floor_m = V < phi_floor_val[None, :]
    upper_m = (V > 0.0) & ~ceil_m
    lower_m = ~(ceil_m | floor_m | upper_m)
    return ceil_m, upper_m, lower_m, floor_m


def segment_labels(b: LayoutBoundaries, height: int, width: int) -> np.ndarray:
    ceil_m, upper_m, lower_m, _ = segment_masks(
        ad.value(b.phi_floor), ad.value(b.phi_ceil), height, width)
    seg = np.full((height, width), SEG_FLOOR, dtype=np.int8)
    seg[lower_m] = SEG_LOWER_WALL
    seg[upper_m] = SEG_UPPER_WALL
    seg[ceil_m] = SEG_CEILING
    return seg


def distance_grid(b: LayoutBoundaries, z_floor, z_ceil, height: int, width: int):
    """Planar distance d for every pixel (Var-aware through phi and z_ceil)."""
    if b.width != width:
        raise ValueError(f"boundary width {b.width} != render width {width}")
    _, _, _, cot_v = _grid_trig(height, width)
    ceil_m, upper_m, lower_m, floor_m = segment_masks(
        ad.value(b.phi_floor), ad.value(b.phi_ceil), height, width)

    cot_c = ad.div(ad.cos(b.phi_ceil), ad.sin(b.phi_ceil))
    cot_f = ad.div(ad.cos(b.phi_floor), ad.sin(b.phi_floor))
    d_upper = ad.mul(cot_c, z_ceil)
    d_lower = ad.mul(cot_f, z_floor)
    # cot_v is +/-inf on a v=0 row (odd heights); that row is never selected
    # by the ceiling/floor branches, so the inf never reaches the output.
    with np.errstate(invalid="ignore"):
        d_ceil = ad.mul(z_ceil, cot_v)
        d_floor = z_floor * cot_v
        d = ad.where(ceil_m, d_ceil,
                     ad.where(upper_m, d_upper,
                              ad.where(lower_m, d_lower, d_floor)))
    return d


def ray_distance(b: LayoutBoundaries, h: LayoutHeights | None, v: float,
                 col: int):
    """Planar distance and segment label of one ray at latitude ``v``.

    The four-case rule: ceiling plane above the ceiling boundary, constant
    wall distance between the boundaries (split at the horizon), floor
    plane below the floor boundary. Continuous in v at both boundaries.
    """
    if not (-0.5 * np.pi < v < 0.5 * np.pi):
        raise ValueError("latitude must lie in (-pi/2, pi/2)")
    z_f, z_c = resolve_heights(b, h)
    phi_f = float(ad.value(b.phi_floor)[col])
    phi_c = float(ad.value(b.phi_ceil)[col])
    z_c = float(ad.value(z_c)) if ad.is_var(z_c) else float(z_c)
    if v > phi_c:
        return z_c / np.tan(v), SEG_CEILING
    if v > 0.0:
        return z_c / np.tan(phi_c), SEG_UPPER_WALL
    if v >= phi_f:
        return z_f / np.tan(phi_f), SEG_LOWER_WALL
    return z_f / np.tan(v), SEG_FLOOR


def render_point_grid(b: LayoutBoundaries, h: LayoutHeights | None,
                      height: int, width: int) -> PointCloudGrid:
    """3D points of all pixels projected onto the layout surface.

    p = d * [cos u, sin u, tan v] per pixel; Var-aware when the boundaries
    are graph leaves.
    """
    z_f, z_c = resolve_heights(b, h)
    cos_u, sin_u, tan_v, _ = _grid_trig(height, width)
    d = distance_grid(b, z_f, z_c, height, width)
    px = ad.mul(d, cos_u)
    py = ad.mul(d, sin_u)
    pz = ad.mul(d, tan_v)
    p = ad.stack([px, py, pz], axis=-1)
    return PointCloudGrid(d, p, segment_labels(b, height, width))


def render_layout_depth(b: LayoutBoundaries, h: LayoutHeights | None,
                        height: int, width: int) -> np.ndarray:
    """Euclidean (radial) depth map of the layout: ||p|| = d / cos(v)."""
    z_f, z_c = resolve_heights(b, h)
    d = ad.value(distance_grid(b, ad.value(z_f) if ad.is_var(z_f) else z_f,
                               ad.value(z_c) if ad.is_var(z_c) else z_c,
                               height, width))
    _, V = pixel_center_grid(height, width)
    return d / np.cos(V)


def warp(src: Panorama, tgt_boundaries: LayoutBoundaries,
         tgt_heights: LayoutHeights | None, pose_t_to_s: RigidPose2D):
    """Warp a source panorama to the target viewpoint (backward warping).

    Every target pixel's layout point is transformed into the source frame,
    projected equirectangularly, and bilinearly sampled from the source
    image. Returns ``(warped_image, warped_mask)``; the mask is the source
    validity mask sampled nearest-neighbor, off wherever the transformed
    point lies on the source's vertical axis. The warped image is a Var
    when the boundaries are graph leaves.

    The pose translation must be expressed in the same scale as the layout
    heights (canonical scale: meters divided by the camera height).
    """
    height, width = src.height, src.width
    if tgt_boundaries.width != width:
        raise ValueError("source width and target layout width differ")
    z_f, z_c = resolve_heights(tgt_boundaries, tgt_heights)
    cos_u, sin_u, tan_v, _ = _grid_trig(height, width)
    d = distance_grid(tgt_boundaries, z_f, z_c, height, width)
    px = ad.mul(d, cos_u)
    py = ad.mul(d, sin_u)
    pz = ad.mul(d, tan_v)

    c, s = np.cos(pose_t_to_s.yaw), np.sin(pose_t_to_s.yaw)
    qx = ad.add(ad.sub(ad.mul(px, c), ad.mul(py, s)), pose_t_to_s.tx)
    qy = ad.add(ad.add(ad.mul(px, s), ad.mul(py, c)), pose_t_to_s.ty)
    qz = pz

    rho2 = ad.add(ad.mul(qx, qx), ad.mul(qy, qy))
    degenerate = ad.value(rho2) < 1e-24
    rho = ad.sqrt(ad.where(degenerate, 1.0, rho2))
    u = ad.arctan2(qy, qx)
    v = ad.arctan(ad.div(qz, rho))
    row, col = uv_to_pixel(u, v, height, width)

    channels = sample_channels(src.image, row, col)
    image = ad.stack(channels, axis=-1)
    mask = sample_nearest(src.mask, ad.value(row), ad.value(col)) & ~degenerate
    return image, mask
