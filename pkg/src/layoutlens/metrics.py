"""Layout evaluation metrics: 2D/3D IoU and depth RMSE / delta_1.

Polygon areas and intersections run on dense W-vertex floor polylines via
shapely's exact predicates; corner simplification is never applied before
measuring. Depth metrics use radial layout depth with the validity mask
applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import shapely.geometry

from .errors import DegeneratePolygonError

AREA_EPS = 1e-12


@dataclass
class MetricReport:
    """The four standard layout metrics."""

    iou2d: float
    iou3d: float
    rmse: float
    delta1: float

    def to_dict(self) -> dict:
        return {"iou2d": self.iou2d, "iou3d": self.iou3d,
                "rmse": self.rmse, "delta1": self.delta1}


def _polygon(points: np.ndarray) -> shapely.geometry.Polygon:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 3:
        raise DegeneratePolygonError("polygon needs at least 3 planar points")
    poly = shapely.geometry.Polygon(points)
    if not poly.is_valid:
        raise DegeneratePolygonError("polygon is self-intersecting")
    if poly.area <= AREA_EPS:
        raise DegeneratePolygonError("polygon area below epsilon")
    return poly


def iou_2d(pred_points: np.ndarray, gt_points: np.ndarray) -> float:
    """Intersection-over-union of two floor polygons."""
    p = _polygon(pred_points)
    g = _polygon(gt_points)
    inter = p.intersection(g).area
    union = p.area + g.area - inter
    if union <= AREA_EPS:
        raise DegeneratePolygonError("union area below epsilon")
    return inter / union


def iou_3d(pred_points: np.ndarray, pred_zf: float, pred_zc: float,
           gt_points: np.ndarray, gt_zf: float, gt_zc: float) -> float:
    """IoU of the layouts extruded into prisms sharing the camera origin."""
    p = _polygon(pred_points)
    g = _polygon(gt_points)
    inter_area = p.intersection(g).area
    overlap = max(0.0, min(pred_zc, gt_zc) - max(pred_zf, gt_zf))
    inter_vol = inter_area * overlap
    vol_p = p.area * (pred_zc - pred_zf)
    vol_g = g.area * (gt_zc - gt_zf)
    union_vol = vol_p + vol_g - inter_vol
    if union_vol <= AREA_EPS:
        raise DegeneratePolygonError("union volume below epsilon")
    return inter_vol / union_vol


def depth_metrics(pred_depth: np.ndarray, gt_depth: np.ndarray,
                  mask: np.ndarray | None = None) -> tuple[float, float]:
    """(RMSE, delta_1) over masked pixels.

    delta_1 is the fraction with max(pred/gt, gt/pred) < 1.25, which is
    invariant under common positive rescaling of both maps.
    """
    pred_depth = np.asarray(pred_depth, dtype=np.float64)
    gt_depth = np.asarray(gt_depth, dtype=np.float64)
    if pred_depth.shape != gt_depth.shape:
        raise ValueError("depth map shapes differ")
    if mask is None:
        mask = np.ones(pred_depth.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pred_depth.shape:
        raise ValueError("mask shape differs from depth maps")
    if not mask.any():
        raise ValueError("empty mask: no pixels to evaluate")
    p = pred_depth[mask]
    g = gt_depth[mask]
    rmse = float(np.sqrt(np.mean((p - g) ** 2)))
    ratio = np.maximum(p / g, g / p)
    delta1 = float(np.mean(ratio < 1.25))
    return rmse, delta1


def evaluate_layout(pred_points: np.ndarray, pred_zf: float, pred_zc: float,
                    gt_points: np.ndarray, gt_zf: float, gt_zc: float,
                    pred_depth: np.ndarray | None = None,
                    gt_depth: np.ndarray | None = None,
                    mask: np.ndarray | None = None) -> MetricReport:
    """All four metrics in one report; depth metrics need the depth maps."""
    iou2 = iou_2d(pred_points, gt_points)
    iou3 = iou_3d(pred_points, pred_zf, pred_zc, gt_points, gt_zf, gt_zc)
    if pred_depth is not None and gt_depth is not None:
        rmse, delta1 = depth_metrics(pred_depth, gt_depth, mask)
    else:
        rmse, delta1 = float("nan"), float("nan")
    return MetricReport(iou2, iou3, rmse, delta1)
