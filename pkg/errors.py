# errors.py
"""Error taxonomy shared by every service module and the CLI exit-code mapping."""


class ParamDetError(Exception):
    """Root of every error raised by the detection pipeline"""


# Geometry
class DegenerateYaw(ParamDetError, ValueError):
    """Rotated +x axis is parallel to z, heading undefined"""


# Meshes
class NotArticulable(ParamDetError, ValueError):
    pass


class OpeningOutOfRange(ParamDetError, ValueError):
    pass


class ClassMismatch(ParamDetError, ValueError):
    pass


class DegenerateExtent(ParamDetError, ValueError):
    pass


class MeshParseError(ParamDetError, ValueError):
    pass


class EmptyMesh(ParamDetError, ValueError):
    pass


# LiDAR simulation
class MissingSourceIds(ParamDetError, ValueError):
    """Cloud was ingested from a file and has no per-point instance ids"""


class EmptyAfterFilter(ParamDetError, ValueError):
    pass


class NotNormalized(ParamDetError, ValueError):
    pass


class FrameMismatch(ParamDetError, ValueError):
    """Cloud is in a frame the operation does not accept"""


# Scene generation
class RegionTooSmall(ParamDetError, ValueError):
    pass


class PlacementFailure(ParamDetError, RuntimeError):
    """Constrained placement still violated after the retry budget"""


class BadRatios(ParamDetError, ValueError):
    pass


# Matching / losses
class EmptySet(ParamDetError, ValueError):
    pass


class TooFewQueries(ParamDetError, ValueError):
    pass


class EmptyDataset(ParamDetError, ValueError):
    pass


# Detector stub
class TooManyTargets(ParamDetError, ValueError):
    pass


# Evaluation
class NoGroundTruth(ParamDetError, ValueError):
    """AP is undefined for a class without ground truth"""


# Pipeline categories, each one maps to a CLI exit code
class ConfigError(ParamDetError, ValueError):
    exit_code = 2


class InvariantViolation(ParamDetError, AssertionError):
    exit_code = 3


class ArtifactIOError(ParamDetError, OSError):
    exit_code = 4


EXIT_OK = 0
EXIT_CONFIG = ConfigError.exit_code
EXIT_INVARIANT = InvariantViolation.exit_code
EXIT_IO = ArtifactIOError.exit_code
