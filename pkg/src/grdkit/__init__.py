"""Constrained Clough-Tocher fitting of quality surfaces over (bitrate, resolution)."""

__version__ = "0.1.0"

from .errors import DataError, GRDError, NumericError  # noqa: E402
from .surface import CoordinateMap, FitOptions, GRDModel, GRDSurface, SamplePoint, fit, fit_surface  # noqa: E402

__all__ = [
    "CoordinateMap", "DataError", "FitOptions", "GRDError", "GRDModel", "GRDSurface",
    "NumericError", "SamplePoint", "fit", "fit_surface", "__version__",
]
