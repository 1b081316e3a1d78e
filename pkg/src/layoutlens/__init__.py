"""Differentiable layout view rendering and self-supervised losses for
360-degree room layout estimation.

The package turns per-column floor/ceiling boundary angles of an
equirectangular panorama into per-pixel 3D layout geometry, warps paired
panoramas across known relative poses, and fits the boundary parameters
directly by gradient descent on a suite of self-supervision losses.
"""

__version__ = "0.1.0"

from .autodiff import FdReport, GradientVector, Var, fd_check, grad_of
from .errors import (ConfigurationError, DegenerateDirectionError,
                     DegeneratePolygonError, DivergenceError, GenerationError,
                     GeometryError, InvalidAnnotationError, LayoutLensError,
                     SchemaError, UnsupportedOpError)
from .geometry import (RigidPose2D, bilinear_sample, equ_proj, pixel_to_uv,
                       relative_pose, transform_point, uv_to_pixel)
from .layout import (LayoutBoundaries, LayoutHeights, RawBoundaries,
                     StretchParams, boundaries_to_corner_polygon, constrain,
                     heights_from_annotation, infer_ceiling_height,
                     project_xy, stretch_image, stretch_layout, unconstrain)
from .losses import (LossConfig, LossReport, TotalInputs, ceil_floor,
                     chamfer_distance, cycle_consistency, manhattan,
                     photometric, source_target, stretch_consistency, total)
from .rendering import (Panorama, PointCloudGrid, ray_distance,
                        render_layout_depth, render_point_grid, warp)
