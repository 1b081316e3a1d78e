"""Self-supervision losses over layout boundaries and warped panoramas.

Six terms: masked photometric reprojection, cycle consistency against a
detached teacher, source-target polyline consistency (symmetric Chamfer),
ceiling-floor projection consistency, Manhattan alignment with slope
compensation, and stretch consistency against the stretched teacher
layout. The weighted aggregate is ``photo + 0.1 * (sum of the others)``.

All terms are differentiable with respect to the raw boundary parameters
through the autodiff ops; branchy pieces (Chamfer nearest neighbors,
window medians, the Manhattan min) follow the branch taken by the forward
pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import GradientVector, Var, backward
from .errors import ConfigurationError
from .geometry import RigidPose2D, column_longitudes
from .layout import (LayoutBoundaries, LayoutHeights, RawBoundaries,
                     StretchParams, constrain, stretch_layout)
from .rendering import Panorama, warp

LOSS_NAMES = ("photo", "cycle", "src_tgt", "ceil_floor", "manhattan", "stretch")
AUX_WEIGHT = 0.1


def default_manhattan_window(width: int) -> int:
    """Median window half-width: 11 columns at W=1024, scaled proportionally."""
    return max(1, round(11 * width / 1024))


@dataclass(frozen=True)
class LossConfig:
    """Which losses are enabled and their knobs."""

    enabled: tuple = LOSS_NAMES
    manhattan_window: int | None = None
    stretch_params: StretchParams | None = None
    chamfer_reduction: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "enabled", tuple(self.enabled))
        unknown = set(self.enabled) - set(LOSS_NAMES)
        if unknown:
            raise ConfigurationError(f"unknown losses: {sorted(unknown)}")
        if not self.enabled:
            raise ConfigurationError("at least one loss must be enabled")
        if self.chamfer_reduction not in ("mean", "sum"):
            raise ConfigurationError("chamfer_reduction must be 'mean' or 'sum'")

    def window_for(self, width: int) -> int:
        w = self.manhattan_window
        if w is None:
            w = default_manhattan_window(width)
        if not (1 <= w < width / 2):
            raise ConfigurationError(
                f"manhattan window half-width {w} invalid for W={width}")
        return w


@dataclass
class LossReport:
    """Named loss values, their weighted total, and the parameter gradient."""

    photo: float = 0.0
    cycle: float = 0.0
    src_tgt: float = 0.0
    ceil_floor: float = 0.0
    manhattan: float = 0.0
    stretch: float = 0.0
    total: float = 0.0
    gradient: GradientVector | None = None

    def to_dict(self) -> dict:
        return {name: float(getattr(self, name))
                for name in LOSS_NAMES + ("total",)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def photometric(tgt_image: np.ndarray, warped_image, mask: np.ndarray):
    """Masked mean squared photometric error, normalized by all H*W pixels."""
    tgt_image = np.asarray(tgt_image, dtype=np.float64)
    shape = ad.value(warped_image).shape
    if shape != tgt_image.shape:
        raise ValueError(f"image shapes differ: {shape} vs {tgt_image.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tgt_image.shape[:2]:
        raise ValueError("mask shape must match image height/width")
    n = tgt_image.shape[0] * tgt_image.shape[1]
    diff = ad.sub(warped_image, tgt_image)
    per_pixel = ad.asum(ad.mul(diff, diff), axis=2)
    masked = ad.where(mask, per_pixel, 0.0)
    return ad.div(ad.asum(masked), float(n))


def _boundary_mse(pred: LayoutBoundaries, target_f: np.ndarray,
                  target_c: np.ndarray):
    width = pred.width
    df = ad.sub(pred.phi_floor, target_f)
    dc = ad.sub(pred.phi_ceil, target_c)
    total = ad.add(ad.asum(ad.mul(df, df)), ad.asum(ad.mul(dc, dc)))
    return ad.div(total, float(width))


def cycle_consistency(pred_on_rendered: LayoutBoundaries,
                      teacher: LayoutBoundaries):
    """MSE between the rendered-view prediction and the detached teacher."""
    if pred_on_rendered.width != teacher.width:
        raise ValueError("boundary widths differ")
    return _boundary_mse(pred_on_rendered, ad.value(teacher.phi_floor),
                         ad.value(teacher.phi_ceil))


def chamfer_distance(ax, ay, bx, by, reduction: str = "mean"):
    """Symmetric Chamfer between two 2D point sets given as coordinate vectors.

    Per direction: reduce (mean or sum) over one set of the squared distance
    to its nearest neighbor in the other; the two directions are added.
    """
    na = ad.value(ax).shape[0]
    nb = ad.value(bx).shape[0]
    dx = ad.sub(ad.reshape(ax, (na, 1)), ad.reshape(bx, (1, nb)))
    dy = ad.sub(ad.reshape(ay, (na, 1)), ad.reshape(by, (1, nb)))
    d2 = ad.add(ad.mul(dx, dx), ad.mul(dy, dy))
    d2_val = ad.value(d2)
    nearest_b = np.argmin(d2_val, axis=1)
    nearest_a = np.argmin(d2_val, axis=0)
    a_to_b = d2[np.arange(na), nearest_b]
    b_to_a = d2[nearest_a, np.arange(nb)]
    reduce = ad.amean if reduction == "mean" else ad.asum
    return ad.add(reduce(a_to_b), reduce(b_to_a))


def _transform_polyline(pl, pose: RigidPose2D):
    c, s = np.cos(pose.yaw), np.sin(pose.yaw)
    x = ad.add(ad.sub(ad.mul(pl.x, c), ad.mul(pl.y, s)), pose.tx)
    y = ad.add(ad.add(ad.mul(pl.x, s), ad.mul(pl.y, c)), pose.ty)
    return x, y


def source_target(src_b: LayoutBoundaries, src_h: LayoutHeights | None,
                  tgt_b: LayoutBoundaries, tgt_h: LayoutHeights | None,
                  pose_s_to_t: RigidPose2D, reduction: str = "mean"):
    """Chamfer consistency of the two views' boundary polylines in the
    target frame, summed over the floor and ceiling channels.

    The full 2D rigid transform (rotation plus translation, in layout
    scale) is applied to the source polylines.
    """
    from .rendering import resolve_heights  # local import to avoid cycle

    zf_s, zc_s = resolve_heights(src_b, src_h)
    zf_t, zc_t = resolve_heights(tgt_b, tgt_h)
    src_f, src_c = project_xy_with(src_b, zf_s, zc_s)
    tgt_f, tgt_c = project_xy_with(tgt_b, zf_t, zc_t)
    loss = None
    for spl, tpl in ((src_f, tgt_f), (src_c, tgt_c)):
        sx, sy = _transform_polyline(spl, pose_s_to_t)
        term = chamfer_distance(sx, sy, tpl.x, tpl.y, reduction)
        loss = term if loss is None else ad.add(loss, term)
    return loss


def project_xy_with(b: LayoutBoundaries, z_floor, z_ceil):
    """project_xy with explicit (possibly Var) plane heights."""
    from .layout import FloorPolyline

    u = column_longitudes(b.width)
    out = []
    for phi, z in ((b.phi_floor, z_floor), (b.phi_ceil, z_ceil)):
        cot = ad.div(ad.cos(phi), ad.sin(phi))
        radial = ad.mul(cot, z)
        out.append(FloorPolyline(ad.mul(radial, np.cos(u)),
                                 ad.mul(radial, np.sin(u))))
    return out[0], out[1]


def ceil_floor(b: LayoutBoundaries, h: LayoutHeights | None):
    """Mean squared XY gap between ceiling and floor projections per column."""
    from .rendering import resolve_heights

    zf, zc = resolve_heights(b, h)
    floor_pl, ceil_pl = project_xy_with(b, zf, zc)
    dx = ad.sub(ceil_pl.x, floor_pl.x)
    dy = ad.sub(ceil_pl.y, floor_pl.y)
    gap = ad.add(ad.mul(dx, dx), ad.mul(dy, dy))
    return ad.amean(gap)


def _circular_median_gather(values, window: int):
    """Per-column circular window median as a gather from the input vector.

    The window has 2w+1 entries (odd), so the median is a single order
    statistic; gathering it keeps the gradient path to the selected column.
    """
    vals = ad.value(values)
    width = vals.shape[0]
    idx = (np.arange(width)[:, None] + np.arange(-window, window + 1)[None, :]) % width
    order = np.argpartition(vals[idx], window, axis=1)[:, window]
    med_cols = idx[np.arange(width), order]
    return values[med_cols]


def manhattan(b: LayoutBoundaries, h: LayoutHeights | None, window: int):
    """Slope-compensated distance to the local coordinate medians.

    Per column the boundary point can only slide along its viewing ray, so
    the x- and y-median discrepancies are scaled by sin(u) and cos(u) and
    the cheaper branch is taken. Mean over columns, summed over the floor
    and ceiling channels.
    """
    from .rendering import resolve_heights

    width = b.width
    if not (1 <= window < width / 2):
        raise ValueError(f"window half-width {window} invalid for W={width}")
    zf, zc = resolve_heights(b, h)
    floor_pl, ceil_pl = project_xy_with(b, zf, zc)
    u = column_longitudes(width)
    sin_u, cos_u = np.sin(u), np.cos(u)
    loss = None
    for pl in (floor_pl, ceil_pl):
        x_med = _circular_median_gather(pl.x, window)
        y_med = _circular_median_gather(pl.y, window)
        tx = ad.absolute(ad.mul(ad.sub(pl.x, x_med), sin_u))
        ty = ad.absolute(ad.mul(ad.sub(pl.y, y_med), cos_u))
        term = ad.amean(ad.minimum(tx, ty))
        loss = term if loss is None else ad.add(loss, term)
    return loss


def stretch_consistency(pred_on_stretched: LayoutBoundaries,
                        teacher: LayoutBoundaries, h: LayoutHeights,
                        k: StretchParams):
    """MSE between the stretched-view prediction and the stretched teacher."""
    if pred_on_stretched.width != teacher.width:
        raise ValueError("boundary widths differ")
    target = stretch_layout(teacher.detached(), h, k)
    return _boundary_mse(pred_on_stretched, ad.value(target.phi_floor),
                         ad.value(target.phi_ceil))


@dataclass
class TotalInputs:
    """Everything :func:`total` may need; enabled losses pick their inputs.

    ``raw_tgt`` is the differentiated parameter table (the reported
    gradient is taken with respect to it). ``heights`` may be None to use
    the inferred ceiling height throughout. Pose translations must be in
    layout scale.
    """

    raw_tgt: RawBoundaries
    heights: LayoutHeights | None = None
    tgt_pano: Panorama | None = None
    src_pano: Panorama | None = None
    pose_t_to_s: RigidPose2D | None = None
    pose_s_to_t: RigidPose2D | None = None
    raw_src: RawBoundaries | None = None
    raw_cycle: RawBoundaries | None = None
    raw_stretch: RawBoundaries | None = None
    stretch_k: StretchParams | None = None


def _require(cfg_name: str, **items):
    missing = [name for name, val in items.items() if val is None]
    if missing:
        raise ConfigurationError(
            f"loss '{cfg_name}' is enabled but inputs {missing} are missing")


def total(inputs: TotalInputs, cfg: LossConfig) -> LossReport:
    """Evaluate the enabled losses, their weighted sum, and its gradient.

    The gradient is reverse-accumulated with respect to ``inputs.raw_tgt``.
    If the raw tables already hold Var leaves (as during fitting), their
    ``.grad`` fields are populated as a side effect and can be read for
    the auxiliary tables.
    """
    raw_tgt = inputs.raw_tgt
    if not ad.is_var(raw_tgt.phi_raw_floor):
        raw_tgt = replace(raw_tgt,
                          phi_raw_floor=Var(raw_tgt.phi_raw_floor),
                          phi_raw_ceil=Var(raw_tgt.phi_raw_ceil))
    tgt_b = constrain(raw_tgt)
    heights = inputs.heights
    width = raw_tgt.width

    terms: dict[str, object] = {}
    if "photo" in cfg.enabled:
        _require("photo", tgt_pano=inputs.tgt_pano, src_pano=inputs.src_pano,
                 pose_t_to_s=inputs.pose_t_to_s)
        warped, warped_mask = warp(inputs.src_pano, tgt_b, heights,
                                   inputs.pose_t_to_s)
        mask = inputs.tgt_pano.mask & warped_mask
        terms["photo"] = photometric(inputs.tgt_pano.image, warped, mask)
    if "cycle" in cfg.enabled:
        _require("cycle", raw_cycle=inputs.raw_cycle)
        terms["cycle"] = cycle_consistency(constrain(inputs.raw_cycle), tgt_b)
    if "src_tgt" in cfg.enabled:
        _require("src_tgt", raw_src=inputs.raw_src,
                 pose_s_to_t=inputs.pose_s_to_t)
        terms["src_tgt"] = source_target(constrain(inputs.raw_src), heights,
                                         tgt_b, heights, inputs.pose_s_to_t,
                                         cfg.chamfer_reduction)
    if "ceil_floor" in cfg.enabled:
        terms["ceil_floor"] = ceil_floor(tgt_b, heights)
    if "manhattan" in cfg.enabled:
        terms["manhattan"] = manhattan(tgt_b, heights, cfg.window_for(width))
    if "stretch" in cfg.enabled:
        _require("stretch", raw_stretch=inputs.raw_stretch,
                 stretch_k=inputs.stretch_k)
        h_for_stretch = heights
        if h_for_stretch is None:
            from .layout import infer_ceiling_height
            z_c = infer_ceiling_height(tgt_b.detached())
            h_for_stretch = LayoutHeights(-1.0, float(z_c))
        terms["stretch"] = stretch_consistency(
            constrain(inputs.raw_stretch), tgt_b, h_for_stretch,
            inputs.stretch_k)

    total_expr = None
    for name in LOSS_NAMES:
        if name not in terms:
            continue
        weighted = terms[name] if name == "photo" else ad.mul(terms[name],
                                                              AUX_WEIGHT)
        total_expr = weighted if total_expr is None else ad.add(total_expr,
                                                                weighted)

    report = LossReport()
    for name, term in terms.items():
        setattr(report, name, float(ad.value(term)))
    report.total = report.photo + AUX_WEIGHT * (
        report.cycle + report.src_tgt + report.ceil_floor
        + report.manhattan + report.stretch)

    if ad.is_var(total_expr):
        backward(total_expr)
        gf = raw_tgt.phi_raw_floor.grad
        gc = raw_tgt.phi_raw_ceil.grad
        report.gradient = GradientVector(
            gf if gf is not None else np.zeros(width),
            gc if gc is not None else np.zeros(width))
    else:
        report.gradient = GradientVector(np.zeros(width), np.zeros(width))
    return report
