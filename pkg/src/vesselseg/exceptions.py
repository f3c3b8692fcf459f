"""Exception hierarchy.

Every error raised by the package derives from :class:`VesselSegError`.  The
three intermediate classes map onto the CLI exit codes: validation problems
exit with 1, I/O problems with 2 and broken internal invariants with 3.
"""


class VesselSegError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ValidationError(VesselSegError, ValueError):
    exit_code = 1


class DataIOError(VesselSegError, OSError):
    exit_code = 2


class InvariantViolation(VesselSegError, AssertionError):
    exit_code = 3


# raster
class UnreadableFile(DataIOError):
    pass


class UnsupportedFormat(DataIOError):
    pass


class ZeroDimension(ValidationError):
    pass


class WriteFailure(DataIOError):
    pass


class EmptyMask(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


# filters
class KernelLargerThanImage(ValidationError):
    pass


class ImageTooSmall(ValidationError):
    pass


# connectivity / features
class OutOfBounds(ValidationError, IndexError):
    pass


class CorruptCache(DataIOError):
    pass


# forest
class EmptyTrainingSet(ValidationError):
    pass


class BadVectorLength(ValidationError):
    pass


class EmptyEvalSet(ValidationError):
    pass


class CorruptModel(DataIOError):
    pass


# growth
class NoSeedsFound(ValidationError):
    pass


# harness
class EmptyEvaluation(ValidationError):
    pass


class DegenerateClasses(ValidationError):
    pass


class MalformedManifest(ValidationError):
    pass
