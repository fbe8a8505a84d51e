"""Exception hierarchy shared by all georacle modules.

Every error raised on a geometry query derives from :class:`GeometryError`
so callers (in particular the CLI) can distinguish "the geometry query
failed" from programming errors.
"""


class GeometryError(Exception):
    """Base class for all geometry-related failures."""


class WeightSumViolation(GeometryError):
    """Weights of an affine point combination do not sum to one."""


class DegenerateInput(GeometryError):
    """A query was posed with coincident or otherwise degenerate points."""


class OracleFailure(GeometryError):
    """A geometry oracle could not produce a well-defined answer."""


class PullBackFailure(OracleFailure):
    """A chart could not map an ambient point to chart coordinates."""


class HalfPeriodAmbiguity(OracleFailure):
    """A periodic average is ill posed (values half a period apart)."""


class AntipodalPoints(OracleFailure):
    """A geodesic between two antipodal sphere points is not unique."""


class TooManyPoints(GeometryError):
    """More input points than the requested operation supports."""


class ParseError(GeometryError):
    """A geometry or mesh file could not be parsed."""


class EmptySurface(GeometryError):
    """A triangulated surface contains no usable triangles."""


class ProjectionMiss(OracleFailure):
    """A projection ray did not intersect the target surface."""


class DegenerateConfiguration(OracleFailure):
    """A point set does not define the requested geometric quantity."""


class NewtonDivergence(OracleFailure):
    """An iterative inverse mapping failed to converge."""


class OutsideCell(GeometryError):
    """An inverse mapping converged to a point outside the unit cell."""


class InvertedChild(GeometryError):
    """Mesh refinement produced a child cell with non-positive Jacobian."""


class NotASurfaceMesh(GeometryError):
    """An operation requiring a surface mesh was called on a volume mesh."""


class DegenerateCell(GeometryError):
    """A cell is too small or collapsed for the requested evaluation."""


class DegenerateTangents(GeometryError):
    """Tangent vectors do not span the expected dimension."""


class SingularJacobian(GeometryError):
    """A mapping Jacobian is singular at the evaluation point."""


class NoChildren(GeometryError):
    """A field transfer requires refined cells that do not exist."""
