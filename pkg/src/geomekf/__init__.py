"""Extended Kalman filtering on manifolds with affine connections.

The package splits into a geometry layer (`manifold`, `groups`), a
distribution layer (`gaussian`), the filter family (`filters`), the
SE2(3) inertial-navigation case study (`ins`) and the Monte Carlo
benchmark harness (`bench`).  `cli` exposes the `geomekf` command.
"""

__version__ = "0.1.0"

from .manifold import Geometry, GeometryError, ChartError
from .groups import Euclidean, SO3, SE3, SE23
from .gaussian import ConcentratedGaussian
from .filters import FilterState, FilterVariant, SystemModel, MeasurementModel

__all__ = [
    "__version__",
    "Geometry",
    "GeometryError",
    "ChartError",
    "Euclidean",
    "SO3",
    "SE3",
    "SE23",
    "ConcentratedGaussian",
    "FilterState",
    "FilterVariant",
    "SystemModel",
    "MeasurementModel",
]
