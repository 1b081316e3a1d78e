"""Exception types shared across the package."""


class LayoutLensError(Exception):
    """Base class for all package-specific errors."""


class InvalidAnnotationError(LayoutLensError, ValueError):
    """Camera/room height annotation violates 0 < h_camera < h_room."""


class GeometryError(LayoutLensError, ValueError):
    """Geometric precondition violated (e.g. camera outside the room polygon)."""


class DegenerateDirectionError(GeometryError):
    """A 3D point lies on the vertical axis through the camera and has no longitude."""


class DegeneratePolygonError(LayoutLensError, ValueError):
    """A polygon handed to a metric is self-intersecting or has no area."""


class GenerationError(LayoutLensError, RuntimeError):
    """Procedural scene generation failed after bounded retries."""


class SchemaError(LayoutLensError, ValueError):
    """A JSON document or scene file does not match its schema."""


class ConfigurationError(LayoutLensError, ValueError):
    """A loss or fit configuration is inconsistent or missing required inputs."""


class UnsupportedOpError(LayoutLensError, TypeError):
    """A non-differentiable operation was reached while building a gradient graph."""

    def __init__(self, op_name: str, detail: str = ""):
        self.op_name = op_name
        msg = f"operation '{op_name}' is not differentiable"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DivergenceError(LayoutLensError, RuntimeError):
    """Optimization produced a non-finite loss; carries the trajectory so far."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory if trajectory is not None else []
