"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`CvisError`;
the CLI maps these to exit code 1 (domain error).
"""


class CvisError(Exception):
    """Base class for domain errors."""


# geometry
class PointBehindCamera(CvisError):
    pass


class RayParallelToPlane(CvisError):
    pass


class IntersectionBehindCamera(CvisError):
    pass


class LengthMismatch(CvisError, ValueError):
    pass


# template / mesh io
class CoefficientLengthMismatch(CvisError, ValueError):
    pass


class EmptyMesh(CvisError):
    pass


class ParseError(CvisError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class MissingPartLabels(CvisError):
    pass


# rendering / baking
class IncompleteTexture(CvisError):
    pass


class LightParallelToPlane(CvisError):
    pass


class MeshFullyOutsideFrustum(CvisError):
    pass


# inpainting
class NoValidTexels(CvisError):
    pass


class InsufficientValidTexels(CvisError):
    pass


class ShapeMismatch(CvisError, ValueError):
    pass


class InsufficientValidParts(CvisError):
    pass


# scene generation / dataset io
class PlacementExhausted(CvisError):
    pass


class SchemaVersionMismatch(CvisError):
    pass


# pose fitting
class TooFewPoints(CvisError):
    pass


class DegenerateConfiguration(CvisError):
    pass


class NoConsensus(CvisError):
    pass


class EmptyDenseMap(CvisError):
    pass


# metrics
class MissingScores(CvisError):
    pass
