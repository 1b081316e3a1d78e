"""Procedural Manhattan rooms ray-traced to equirectangular panorama pairs.

Rooms are axis-aligned rectilinear polygons (a rectangle with up to four
corner cuts, giving 4..12 corners) with one horizontal floor, one
horizontal ceiling, and vertical walls. Cameras share a fixed height and
axis-aligned yaw, so rendered panoramas are Manhattan-aligned by
construction. Every surface carries a smooth Lambertian procedural
texture (low-frequency soft checker plus lattice value noise) so that
photometric losses have a clear minimum while bilinear resampling error
stays far below the loss thresholds; wall textures are parameterized by
perimeter arc length, which keeps them continuous across room corners.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import shapely.geometry

from .errors import GenerationError, GeometryError
from .geometry import RigidPose2D, column_longitudes, pixel_center_grid, relative_pose
from .layout import LayoutBoundaries, LayoutHeights, heights_from_annotation
from .rendering import Panorama

DEFAULT_TRIPOD_LATITUDE = np.deg2rad(-75.0)
TRIPOD_COLOR = np.array([0.08, 0.08, 0.09])
MIN_WALL_CLEARANCE = 0.2


@dataclass
class RoomSpec:
    """A rectilinear room with textured surfaces and interior camera poses."""

    polygon: np.ndarray            # (V, 2) CCW, axis-aligned edges, meters
    room_height: float
    camera_height: float
    poses: list                    # list of RigidPose2D, camera at fixed height
    seeds: dict = field(default_factory=dict)   # floor / ceiling / walls

    def __post_init__(self):
        self.polygon = np.asarray(self.polygon, dtype=np.float64)
        validate_room_polygon(self.polygon)
        if not (0.0 < self.camera_height < self.room_height):
            raise GeometryError("camera height must lie inside (0, room height)")
        shp = shapely.geometry.Polygon(self.polygon)
        ring = shp.exterior
        for pose in self.poses:
            pt = shapely.geometry.Point(pose.tx, pose.ty)
            if not shp.contains(pt) or ring.distance(pt) < MIN_WALL_CLEARANCE:
                raise GeometryError(
                    f"camera at ({pose.tx:.2f}, {pose.ty:.2f}) is outside the "
                    f"room or closer than {MIN_WALL_CLEARANCE} m to a wall")

    @property
    def heights(self) -> LayoutHeights:
        return heights_from_annotation(self.camera_height, self.room_height)

    def edges(self):
        p0 = self.polygon
        p1 = np.roll(self.polygon, -1, axis=0)
        return p0, p1

    def edge_lengths(self) -> np.ndarray:
        p0, p1 = self.edges()
        return np.hypot(*(p1 - p0).T)

    def perimeter_offsets(self) -> np.ndarray:
        lengths = self.edge_lengths()
        return np.concatenate([[0.0], np.cumsum(lengths)])


def validate_room_polygon(polygon: np.ndarray) -> None:
    """Simple, closed, CCW, axis-aligned-edges-only polygon check."""
    if polygon.ndim != 2 or polygon.shape[1] != 2 or polygon.shape[0] < 4:
        raise GeometryError("room polygon needs at least 4 planar vertices")
    delta = np.roll(polygon, -1, axis=0) - polygon
    axis_aligned = (np.abs(delta[:, 0]) < 1e-12) ^ (np.abs(delta[:, 1]) < 1e-12)
    if not np.all(axis_aligned):
        raise GeometryError("room polygon edges must be axis-aligned")
    shp = shapely.geometry.Polygon(polygon)
    if not (shp.is_valid and shp.is_simple and shp.area > 1e-9):
        raise GeometryError("room polygon must be simple with positive area")
    signed = 0.5 * np.sum(polygon[:, 0] * np.roll(polygon[:, 1], -1)
                          - np.roll(polygon[:, 0], -1) * polygon[:, 1])
    if signed <= 0:
        raise GeometryError("room polygon must wind counterclockwise")


def _corner_cut_rectangle(rng: np.random.Generator, corner_count: int):
    w = rng.uniform(3.0, 5.2)
    d = rng.uniform(3.0, 5.2)
    x0, y0, x1, y1 = -w / 2, -d / 2, w / 2, d / 2
    n_cuts = (corner_count - 4) // 2
    cut_corners = sorted(rng.choice(4, size=n_cuts, replace=False)) if n_cuts else []
    # fractions <= 0.45 of each full edge guarantee cuts never collide
    cuts = {c: (rng.uniform(0.22, 0.45) * w, rng.uniform(0.22, 0.45) * d)
            for c in cut_corners}
    verts = []
    corner_xy = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    for c, (cx, cy) in enumerate(corner_xy):
        if c not in cuts:
            verts.append((cx, cy))
            continue
        a, b = cuts[c]
        if c == 0:
            verts += [(x0, y0 + b), (x0 + a, y0 + b), (x0 + a, y0)]
        elif c == 1:
            verts += [(x1 - a, y0), (x1 - a, y0 + b), (x1, y0 + b)]
        elif c == 2:
            verts += [(x1, y1 - b), (x1 - a, y1 - b), (x1 - a, y1)]
        else:
            verts += [(x0 + a, y1), (x0 + a, y1 - b), (x0, y1 - b)]
    return np.array(verts, dtype=np.float64)


def sample_room(seed: int, corner_count: int = 4, n_poses: int = 2,
                camera_clearance: float = 0.75,
                max_tries: int = 400) -> RoomSpec:
    """Deterministic random room with interior Manhattan-aligned cameras.

    ``camera_clearance`` keeps cameras away from walls (capture rigs are
    never flush against a wall); it degrades gracefully toward the hard
    0.2 m floor when a room is too tight for the requested clearance.
    """
    if corner_count not in (4, 6, 8, 10, 12):
        raise ValueError("corner count must be one of 4, 6, 8, 10, 12")
    rng = np.random.default_rng(seed)
    polygon = _corner_cut_rectangle(rng, corner_count)
    room_height = rng.uniform(2.5, 3.2)
    camera_height = rng.uniform(1.3, 1.7)

    shp = shapely.geometry.Polygon(polygon)
    ring = shp.exterior
    lo = polygon.min(axis=0)
    hi = polygon.max(axis=0)
    poses = []
    clearance = max(camera_clearance, MIN_WALL_CLEARANCE + 0.1)
    for attempt in range(max_tries):
        if len(poses) == n_poses:
            break
        # relax toward the hard floor if the room is too tight
        relax = clearance if attempt < max_tries // 2 else \
            max(MIN_WALL_CLEARANCE + 0.1, clearance * 0.6)
        x = rng.uniform(lo[0], hi[0])
        y = rng.uniform(lo[1], hi[1])
        pt = shapely.geometry.Point(x, y)
        if not shp.contains(pt) or ring.distance(pt) < relax:
            continue
        if poses and min(np.hypot(p.tx - x, p.ty - y) for p in poses) < 0.6:
            continue
        yaw = 0.5 * np.pi * rng.integers(0, 4)
        poses.append(RigidPose2D(float(x), float(y), float(yaw)))
    if len(poses) != n_poses:
        raise GenerationError(
            f"could not place {n_poses} cameras after {max_tries} tries")
    seeds = {"floor": int(rng.integers(1 << 31)),
             "ceiling": int(rng.integers(1 << 31)),
             "walls": int(rng.integers(1 << 31))}
    return RoomSpec(polygon, float(room_height), float(camera_height),
                    poses, seeds)


# -- procedural textures ----------------------------------------------------

def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic lattice hash -> [0, 1), vectorized over int arrays."""
    x = ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    y = iy.astype(np.uint64) * np.uint64(0xBF58476D1CE4E5B9)
    seed_mix = (int(seed) * 0x94D049BB133111EB) % (1 << 64)
    h = x ^ y ^ np.uint64(seed_mix)
    h ^= h >> np.uint64(31)
    h *= np.uint64(0xD6E8FEB86659FD93)
    h ^= h >> np.uint64(27)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(s: np.ndarray, t: np.ndarray, cell: float, seed: int,
                 period_cells: int | None = None) -> np.ndarray:
    """Bilinear lattice value noise in [-1, 1]; optionally periodic in s."""
    gs = s / cell
    gt = t / cell
    i0 = np.floor(gs).astype(np.int64)
    j0 = np.floor(gt).astype(np.int64)
    fs = gs - i0
    ft = gt - j0
    fs = fs * fs * (3.0 - 2.0 * fs)  # smoothstep keeps the field C1
    ft = ft * ft * (3.0 - 2.0 * ft)
    if period_cells is not None:
        i0w, i1w = i0 % period_cells, (i0 + 1) % period_cells
    else:
        i0w, i1w = i0, i0 + 1
    v00 = _hash01(i0w, j0, seed)
    v01 = _hash01(i0w, j0 + 1, seed)
    v10 = _hash01(i1w, j0, seed)
    v11 = _hash01(i1w, j0 + 1, seed)
    top = v00 * (1 - ft) + v01 * ft
    bot = v10 * (1 - ft) + v11 * ft
    return 2.0 * (top * (1 - fs) + bot * fs) - 1.0


def _surface_color(s, t, seed: int, base: np.ndarray, drift_phase: float,
                   checker_cell: float, noise_cell: float,
                   s_period: float | None = None) -> np.ndarray:
    """Shared texture recipe: long-wave drift + soft checker + value noise.

    The long-wave drift is the strongest term; its meters-scale luminance
    ramps survive heavy downsampling and give coarse-to-fine photometric
    fitting a smooth long-range signal, while the checker and noise sharpen
    the minimum at fine scales. With ``s_period`` set, every s-dependent
    term is made exactly periodic (integer cycle counts, periodic noise
    lattice) so wall textures close seamlessly around the room perimeter.
    """
    if s_period is not None:
        n_drift = max(1, round(s_period / 7.0))
        drift_s = np.sin(2 * np.pi * n_drift * s / s_period + drift_phase)
        n_check = max(2, round(s_period / checker_cell))
        check_s = np.sin(2 * np.pi * n_check * s / s_period)
        n_cells = max(2, round(s_period / noise_cell))
        noise = _value_noise(s, t, s_period / n_cells, seed,
                             period_cells=n_cells)
        n_chroma = max(2, round(s_period / (noise_cell * 1.7)))
        chroma = _value_noise(s + 7.3, t, s_period / n_chroma, seed + 101,
                              period_cells=n_chroma)
    else:
        drift_s = np.sin(2 * np.pi * s / 7.3 + drift_phase)
        check_s = np.sin(2 * np.pi * s / checker_cell)
        noise = _value_noise(s, t, noise_cell, seed)
        chroma = _value_noise(s + 7.3, t, noise_cell * 1.7, seed + 101)
    drift_t = np.sin(2 * np.pi * t / 5.1 + 2.1 * drift_phase + 0.7)
    check = check_s * np.sin(2 * np.pi * t / checker_cell)
    lum = 0.12 * check + 0.12 * noise + 0.12 * drift_s + 0.10 * drift_t
    color = base[None, None, :] + lum[..., None] * np.array([1.0, 0.9, 1.1])
    color[..., 1] += 0.05 * chroma
    return np.clip(color, 0.02, 0.98)


def _floor_color(x, y, room: RoomSpec):
    base = np.array([0.30, 0.26, 0.22])
    return _surface_color(x, y, room.seeds["floor"], base, 0.0, 0.9, 0.55)


def _ceiling_color(x, y, room: RoomSpec):
    base = np.array([0.82, 0.82, 0.80])
    return _surface_color(x, y, room.seeds["ceiling"], base, 1.0, 1.1, 0.7)


def _wall_color(s, z, room: RoomSpec, perimeter: float):
    base = np.array([0.55, 0.52, 0.50])
    return _surface_color(s, z, room.seeds["walls"], base, 2.0, 0.8, 0.5,
                          s_period=perimeter)


# -- ray casting --------------------------------------------------------------

def ray_cast(room: RoomSpec, origin: np.ndarray, angles: np.ndarray):
    """Nearest wall intersection per angle: (distance, edge index, hit xy).

    Rectilinear edges only; pixel-center angles never align exactly with
    the axes, so the degenerate parallel case cannot select an edge.
    """
    p0, p1 = room.edges()
    dx = np.cos(angles)[:, None]
    dy = np.sin(angles)[:, None]
    vertical = np.abs(p1[:, 0] - p0[:, 0]) < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        t_v = (p0[None, :, 0] - origin[0]) / dx
        y_hit = origin[1] + t_v * dy
        lo = np.minimum(p0[:, 1], p1[:, 1])[None, :]
        hi = np.maximum(p0[:, 1], p1[:, 1])[None, :]
        ok_v = vertical[None, :] & (t_v > 1e-9) & (y_hit >= lo - 1e-12) & (y_hit <= hi + 1e-12)

        t_h = (p0[None, :, 1] - origin[1]) / dy
        x_hit = origin[0] + t_h * dx
        lo_x = np.minimum(p0[:, 0], p1[:, 0])[None, :]
        hi_x = np.maximum(p0[:, 0], p1[:, 0])[None, :]
        ok_h = ~vertical[None, :] & (t_h > 1e-9) & (x_hit >= lo_x - 1e-12) & (x_hit <= hi_x + 1e-12)

    t = np.where(ok_v, t_v, np.where(ok_h, t_h, np.inf))
    edge = np.argmin(t, axis=1)
    dist = t[np.arange(t.shape[0]), edge]
    if not np.all(np.isfinite(dist)):
        raise GeometryError("a ray escaped the room polygon; origin outside?")
    hit = origin[None, :] + dist[:, None] * np.concatenate([dx, dy], axis=1)
    return dist, edge, hit


def _camera_inside(room: RoomSpec, pose: RigidPose2D) -> None:
    shp = shapely.geometry.Polygon(room.polygon)
    if not shp.contains(shapely.geometry.Point(pose.tx, pose.ty)):
        raise GeometryError("camera pose lies outside the room polygon")


def gt_boundaries(room: RoomSpec, pose: RigidPose2D, width: int) -> LayoutBoundaries:
    """Exact boundary angles seen from a pose, in canonical layout scale."""
    _camera_inside(room, pose)
    u = column_longitudes(width)
    angles = pose.yaw + u
    dist, _, _ = ray_cast(room, np.array([pose.tx, pose.ty]), angles)
    r_layout = dist / room.camera_height
    h = room.heights
    return LayoutBoundaries(np.arctan2(h.z_floor, r_layout),
                            np.arctan2(h.z_ceil, r_layout))


def trace_panorama(room: RoomSpec, pose_index: int, height: int, width: int,
                   tripod_latitude: float = DEFAULT_TRIPOD_LATITUDE,
                   texture_ref: tuple | None = None):
    """Analytic render of a panorama: (Panorama, Euclidean depth in meters).

    ``texture_ref`` is an optional ``(reference_room, (sx, sy))`` pair:
    all texture lookups are evaluated on the reference room's surfaces
    after scaling hit points by (sx, sy). Used by oracles that compare a
    stretched render against the stretched original scene.
    """
    pose = room.poses[pose_index]
    _camera_inside(room, pose)
    ref_room, (sx, sy) = texture_ref if texture_ref else (room, (1.0, 1.0))

    u = column_longitudes(width)
    angles = pose.yaw + u
    origin = np.array([pose.tx, pose.ty])
    s_wall, edge_id, wall_hit = ray_cast(room, origin, angles)

    _, V = pixel_center_grid(height, width)
    tan_v = np.tan(V)
    h_cam = room.camera_height
    h_room = room.room_height

    with np.errstate(divide="ignore", invalid="ignore"):
        s_floor = np.where(tan_v < 0, -h_cam / tan_v, np.inf)
        s_ceil = np.where(tan_v > 0, (h_room - h_cam) / tan_v, np.inf)
    s_wall_grid = np.broadcast_to(s_wall[None, :], (height, width))
    candidates = np.stack([s_floor, s_ceil, s_wall_grid])
    kind = np.argmin(candidates, axis=0)  # 0 floor, 1 ceiling, 2 wall
    s_hit = np.take_along_axis(candidates, kind[None], axis=0)[0]

    cos_a = np.cos(angles)[None, :]
    sin_a = np.sin(angles)[None, :]
    hx = origin[0] + s_hit * cos_a
    hy = origin[1] + s_hit * sin_a
    hz = h_cam + s_hit * tan_v

    # wall arc-length coordinate is constant per column
    ref_p0, _ = ref_room.edges()
    offsets = ref_room.perimeter_offsets()
    perimeter = offsets[-1]
    ref_hit = wall_hit * np.array([sx, sy])
    along = np.hypot(ref_hit[:, 0] - ref_p0[edge_id, 0],
                     ref_hit[:, 1] - ref_p0[edge_id, 1])
    s_coord = (offsets[edge_id] + along)[None, :]
    s_coord = np.broadcast_to(s_coord, (height, width))

    floor_rgb = _floor_color(hx * sx, hy * sy, ref_room)
    ceil_rgb = _ceiling_color(hx * sx, hy * sy, ref_room)
    wall_rgb = _wall_color(s_coord, hz, ref_room, perimeter)

    image = np.where(kind[..., None] == 0, floor_rgb,
                     np.where(kind[..., None] == 1, ceil_rgb, wall_rgb))
    depth = s_hit / np.cos(V)

    mask = V >= tripod_latitude
    image = np.where(mask[..., None], image, TRIPOD_COLOR[None, None, :])
    return Panorama(image, mask), depth


@dataclass
class ScenePair:
    """Two rendered views of one room with exact layouts, poses, and depth."""

    pano_a: Panorama
    pano_b: Panorama
    pose_a: RigidPose2D
    pose_b: RigidPose2D
    heights: LayoutHeights
    gt_layout_a: LayoutBoundaries
    gt_layout_b: LayoutBoundaries
    depth_a: np.ndarray
    depth_b: np.ndarray
    camera_height: float
    room_height: float
    seed: int = 0

    def pano(self, view: str) -> Panorama:
        return self.pano_a if view == "a" else self.pano_b

    def pose(self, view: str) -> RigidPose2D:
        return self.pose_a if view == "a" else self.pose_b

    def gt_layout(self, view: str) -> LayoutBoundaries:
        return self.gt_layout_a if view == "a" else self.gt_layout_b

    def depth(self, view: str) -> np.ndarray:
        return self.depth_a if view == "a" else self.depth_b

    def frame_transfer(self, frm: str, to: str) -> RigidPose2D:
        """Pose mapping ``frm``-view points into the ``to`` view's frame,
        with the translation in canonical layout scale."""
        return relative_pose(self.pose(to), self.pose(frm)).scaled(
            1.0 / self.camera_height)

    def warp_pose(self, src: str, tgt: str) -> RigidPose2D:
        """Pose handed to :func:`layoutlens.rendering.warp`: target frame
        into source frame."""
        return self.frame_transfer(frm=tgt, to=src)


def make_scene_pair(room: RoomSpec, pose_indices: tuple = (0, 1),
                    height: int = 256, width: int = 512,
                    seed: int = 0) -> ScenePair:
    """Render a two-view scene with ground truth for every artifact."""
    ia, ib = pose_indices
    pano_a, depth_a = trace_panorama(room, ia, height, width)
    if ib == ia:
        pano_b, depth_b = pano_a, depth_a
    else:
        pano_b, depth_b = trace_panorama(room, ib, height, width)
    return ScenePair(
        pano_a=pano_a, pano_b=pano_b,
        pose_a=room.poses[ia], pose_b=room.poses[ib],
        heights=room.heights,
        gt_layout_a=gt_boundaries(room, room.poses[ia], width),
        gt_layout_b=gt_boundaries(room, room.poses[ib], width),
        depth_a=depth_a, depth_b=depth_b,
        camera_height=room.camera_height, room_height=room.room_height,
        seed=seed)
