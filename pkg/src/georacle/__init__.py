"""georacle: geometry oracles for curved finite element meshes."""

from .core import FlatManifold, Manifold, new_point, tangent_vector
from .charts import (
    ChartManifold,
    CylindricalChart,
    GradedSineChart,
    GradedSquareChart,
    IdentityChart,
    PolarChart,
    SphereGeodesicManifold,
    SphereProjectionManifold,
    SphericalAverageManifold,
    SphericalShellChart,
    periodic_average,
)
from . import errors

__version__ = "0.1.0"

__all__ = [
    "Manifold",
    "FlatManifold",
    "new_point",
    "tangent_vector",
    "ChartManifold",
    "IdentityChart",
    "PolarChart",
    "SphericalShellChart",
    "CylindricalChart",
    "GradedSquareChart",
    "GradedSineChart",
    "SphereProjectionManifold",
    "SphericalAverageManifold",
    "SphereGeodesicManifold",
    "periodic_average",
    "errors",
]
