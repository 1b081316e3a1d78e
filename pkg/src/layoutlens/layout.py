"""Layout boundaries: ranges, height inference, XY projection, stretching.

A layout is one floor and one ceiling boundary angle per image column.
Floor angles live strictly in (-pi/2, 0), ceiling angles in (0, pi/2);
unconstrained parameters are squashed into those ranges by a scaled
sigmoid so any finite raw value yields a valid layout. Reconstruction is
up to scale with the floor plane fixed at z = -1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import shapely.geometry

from . import autodiff as ad
from .errors import InvalidAnnotationError, UnsupportedOpError
from .geometry import TAU, column_longitudes


def _as_param(vec, name: str):
    """Validate a (W,) parameter vector that may be a Var or array-like."""
    if ad.is_var(vec):
        val = vec.value
    else:
        vec = np.asarray(vec, dtype=np.float64)
        val = vec
    if val.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {val.shape}")
    if not np.all(np.isfinite(val)):
        raise ValueError(f"{name} contains non-finite values")
    return vec


@dataclass
class RawBoundaries:
    """Unconstrained per-column boundary parameters (before the sigmoid)."""

    phi_raw_floor: object
    phi_raw_ceil: object

    def __post_init__(self):
        self.phi_raw_floor = _as_param(self.phi_raw_floor, "phi_raw_floor")
        self.phi_raw_ceil = _as_param(self.phi_raw_ceil, "phi_raw_ceil")
        if ad.value(self.phi_raw_floor).shape != ad.value(self.phi_raw_ceil).shape:
            raise ValueError("floor/ceiling parameter lengths differ")

    @property
    def width(self) -> int:
        return ad.value(self.phi_raw_floor).shape[0]

    @staticmethod
    def flat(width: int) -> "RawBoundaries":
        """All-zero parameters: phi_floor = -pi/4, phi_ceil = pi/4 everywhere."""
        return RawBoundaries(np.zeros(width), np.zeros(width))


@dataclass
class LayoutBoundaries:
    """Per-column floor/ceiling viewing angles with open-interval ranges."""

    phi_floor: object
    phi_ceil: object

    def __post_init__(self):
        self.phi_floor = _as_param(self.phi_floor, "phi_floor")
        self.phi_ceil = _as_param(self.phi_ceil, "phi_ceil")
        f = ad.value(self.phi_floor)
        c = ad.value(self.phi_ceil)
        if f.shape != c.shape:
            raise ValueError("floor/ceiling boundary lengths differ")
        if np.any(f <= -0.5 * np.pi) or np.any(f >= 0.0):
            raise ValueError("phi_floor must lie strictly in (-pi/2, 0)")
        if np.any(c <= 0.0) or np.any(c >= 0.5 * np.pi):
            raise ValueError("phi_ceil must lie strictly in (0, pi/2)")

    @property
    def width(self) -> int:
        return ad.value(self.phi_floor).shape[0]

    def detached(self) -> "LayoutBoundaries":
        return LayoutBoundaries(ad.value(self.phi_floor).copy(),
                                ad.value(self.phi_ceil).copy())


@dataclass(frozen=True)
class LayoutHeights:
    """Signed plane offsets of floor (negative) and ceiling (positive)."""

    z_floor: float = -1.0
    z_ceil: float = 1.0

    def __post_init__(self):
        if not (self.z_floor < 0.0 < self.z_ceil):
            raise ValueError("need z_floor < 0 < z_ceil")


@dataclass
class FloorPolyline:
    """W planar points in camera-centered world XY, one per image column."""

    x: object
    y: object

    @property
    def points(self) -> np.ndarray:
        return np.stack([ad.value(self.x), ad.value(self.y)], axis=-1)


@dataclass(frozen=True)
class StretchParams:
    """Anisotropic XY scene scaling factors for the stretch augmentation."""

    kx: float
    ky: float
    k_min: float = 0.5
    k_max: float = 2.0

    def __post_init__(self):
        if not (0.0 < self.k_min <= 1.0 <= self.k_max):
            raise ValueError("need 0 < k_min <= 1 <= k_max")
        for k in (self.kx, self.ky):
            if not (self.k_min <= k <= self.k_max):
                raise ValueError(f"stretch factor {k} outside [{self.k_min}, {self.k_max}]")

    @staticmethod
    def sample(rng: np.random.Generator, k_min: float = 0.5,
               k_max: float = 2.0) -> "StretchParams":
        lo, hi = np.log(k_min), np.log(k_max)
        kx, ky = np.exp(rng.uniform(lo, hi, size=2))
        return StretchParams(float(kx), float(ky), k_min, k_max)


def constrain(raw: RawBoundaries) -> LayoutBoundaries:
    """Squash raw parameters into valid boundary ranges (differentiable).

    phi_floor = -pi/2 * sigmoid(raw_floor), phi_ceil = pi/2 * sigmoid(raw_ceil).
    """
    phi_f = ad.mul(ad.sigmoid(raw.phi_raw_floor), -0.5 * np.pi)
    phi_c = ad.mul(ad.sigmoid(raw.phi_raw_ceil), 0.5 * np.pi)
    return LayoutBoundaries(phi_f, phi_c)


def unconstrain(b: LayoutBoundaries) -> RawBoundaries:
    """Inverse of :func:`constrain` (logit of the scaled angles)."""
    f = ad.value(b.phi_floor) / (-0.5 * np.pi)
    c = ad.value(b.phi_ceil) / (0.5 * np.pi)
    return RawBoundaries(np.log(f / (1.0 - f)), np.log(c / (1.0 - c)))


def infer_ceiling_height(b: LayoutBoundaries):
    """Ceiling plane height implied by the boundaries with z_floor = -1.

    Mean over columns of -cot(phi_floor) * tan(phi_ceil); this is the
    least-squares fit of a single height to the per-column estimates and is
    differentiable with respect to every column.
    """
    cot_f = ad.div(ad.cos(b.phi_floor), ad.sin(b.phi_floor))
    per_column = ad.mul(ad.mul(cot_f, ad.tan(b.phi_ceil)), -1.0)
    z = ad.amean(per_column)
    return z if ad.is_var(z) else float(z)


def heights_from_annotation(h_camera: float, h_room: float) -> LayoutHeights:
    """Canonical heights from annotated camera and room heights (meters)."""
    if not (0.0 < h_camera < h_room):
        raise InvalidAnnotationError(
            f"need 0 < camera height < room height, got {h_camera}, {h_room}")
    return LayoutHeights(-1.0, (h_room - h_camera) / h_camera)


def project_xy(b: LayoutBoundaries, h: LayoutHeights):
    """Project boundary points onto the XY plane (differentiable).

    Each column's boundary point is z_r * [cot(phi) cos(u), cot(phi) sin(u)]
    for its plane height z_r, giving a horizontal polyline per boundary.
    Returns (floor, ceiling) FloorPolyline pairs.
    """
    u = column_longitudes(b.width)
    out = []
    for phi, z in ((b.phi_floor, h.z_floor), (b.phi_ceil, h.z_ceil)):
        cot = ad.div(ad.cos(phi), ad.sin(phi))
        radial = ad.mul(cot, z)
        out.append(FloorPolyline(ad.mul(radial, np.cos(u)),
                                 ad.mul(radial, np.sin(u))))
    return out[0], out[1]


def _require_plain(b: LayoutBoundaries, op_name: str) -> None:
    if ad.is_var(b.phi_floor) or ad.is_var(b.phi_ceil):
        raise UnsupportedOpError(op_name, "operates on detached boundaries only")


def stretch_layout(b: LayoutBoundaries, h: LayoutHeights,
                   k: StretchParams) -> LayoutBoundaries:
    """Boundaries of the scene after scaling world XY by (kx, ky).

    Boundary points map to (kx*x, ky*y) at new longitudes; the resulting
    nonuniform samples are resampled onto the uniform column grid by
    periodic linear interpolation in u. Not differentiable; it is only ever
    applied to detached teacher boundaries.
    """
    _require_plain(b, "stretch_layout")
    u = column_longitudes(b.width)
    new = []
    for phi, z in ((ad.value(b.phi_floor), h.z_floor),
                   (ad.value(b.phi_ceil), h.z_ceil)):
        d = z / np.tan(phi)  # horizontal distance, positive for valid ranges
        x = d * np.cos(u) * k.kx
        y = d * np.sin(u) * k.ky
        u_new = np.arctan2(y, x) % TAU
        phi_new = np.arctan2(z, np.hypot(x, y))
        new.append(np.interp(u, u_new, phi_new, period=TAU))
    return LayoutBoundaries(new[0], new[1])


def stretch_image(img: np.ndarray, k: StretchParams) -> np.ndarray:
    """Panorama of the scene after scaling world XY by (kx, ky).

    Backward warp: the output ray [cos u, sin u, tan v] looks up the source
    direction [cos u / kx, sin u / ky, tan v] (linear maps send rays to
    rays), with bilinear sampling and seam wrap.
    """
    from .geometry import pixel_center_grid, uv_to_pixel, bilinear_sample

    img = np.asarray(img, dtype=np.float64)
    height, width = img.shape[0], img.shape[1]
    U, V = pixel_center_grid(height, width)
    dx = np.cos(U) / k.kx
    dy = np.sin(U) / k.ky
    rho = np.hypot(dx, dy)
    u_src = np.arctan2(dy, dx) % TAU
    v_src = np.arctan(np.tan(V) / rho)
    row, col = uv_to_pixel(u_src, v_src, height, width)
    color, _, _ = bilinear_sample(img, row, col)
    return color


def boundaries_to_corner_polygon(b: LayoutBoundaries, h: LayoutHeights,
                                 tol: float = 0.0) -> np.ndarray:
    """Dense W-vertex floor polygon, optionally Douglas-Peucker simplified.

    Simplification is for human-readable corner lists only; metrics always
    consume the dense polygon. Returns an (n, 2) vertex array, n >= 3.
    """
    _require_plain(b, "boundaries_to_corner_polygon")
    floor, _ = project_xy(b.detached(), h)
    pts = floor.points
    if tol <= 0.0:
        return pts
    poly = shapely.geometry.Polygon(pts).simplify(tol, preserve_topology=True)
    coords = np.asarray(poly.exterior.coords)[:-1]
    if coords.shape[0] < 3:
        raise ValueError("simplification collapsed the polygon")
    return coords
