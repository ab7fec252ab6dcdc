"""Exception types raised across the package."""


class GraspSynthError(Exception):
    """Base class for all package errors."""


class MalformedMeshError(GraspSynthError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class EmptyGeometryError(GraspSynthError, ValueError):
    pass


class DegenerateObjectError(GraspSynthError, ValueError):
    pass


class BehindCameraError(GraspSynthError, ValueError):
    pass


class DegenerateGraspError(GraspSynthError, ValueError):
    pass


class DegenerateProjectionError(GraspSynthError, ValueError):
    pass


class InvalidScoreError(GraspSynthError, ValueError):
    pass


class InvalidTemperatureError(GraspSynthError, ValueError):
    pass


class ShapeError(GraspSynthError, ValueError):
    pass


class InsufficientNegativesError(GraspSynthError, ValueError):
    pass


class EmptyRegionError(GraspSynthError, ValueError):
    pass


class ConfigError(GraspSynthError, ValueError):
    pass


class DatasetError(GraspSynthError):
    """Unusable dataset input, such as a directory with no loadable mesh."""
