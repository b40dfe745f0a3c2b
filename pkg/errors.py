"""Exception hierarchy shared by the library and the command line.

Each error carries the exit code the CLI reports for it: 1 for I/O and
parsing problems, 2 for domain and validation failures.
"""

from typing import Optional

EXIT_OK = 0
EXIT_IO = 1
EXIT_DOMAIN = 2


class PoseLabelError(Exception):
    """Base class for all pipeline errors."""

    exit_code = EXIT_DOMAIN


# Domain failures

class DegenerateConfiguration(PoseLabelError):
    """Correspondences are coplanar, rank deficient or duplicated."""


class TooFewPoints(PoseLabelError):
    """Fewer correspondences than the solver needs."""


class NonFiniteResidual(PoseLabelError):
    """A point fell behind the camera and damping could not recover."""


class MixedCameras(PoseLabelError):
    """Board observations from more than one camera were combined."""


class InsufficientOrientationDiversity(PoseLabelError):
    """Board placements do not span enough orientations for a PnP solve."""


class InvalidObservation(PoseLabelError):
    """A board observation's corners do not fit the board or the image."""


class MissingMesh(PoseLabelError):
    """An object id has no mesh."""


class MissingExtrinsics(PoseLabelError):
    """A camera has no extrinsics or intrinsics."""


class DimensionMismatch(PoseLabelError):
    """Two images that must agree in shape do not."""


class ValueOverflow(PoseLabelError):
    """A quantised value does not fit its storage type."""


class TuningGridTooLarge(PoseLabelError):
    """The tuning grid exceeds the configured candidate cap."""


class ValidationFailed(PoseLabelError):
    """A dataset did not pass validation."""


class ConfigError(PoseLabelError):
    """A configuration value is missing or out of range."""


class OutputExists(PoseLabelError):
    """Output already exists and overwriting was not requested."""


class InvalidInput(PoseLabelError, ValueError):
    """An argument or record breaks a precondition (also a ValueError)."""


# I/O and parsing failures

class IoError(PoseLabelError):
    exit_code = EXIT_IO


class ParseError(IoError):
    """Malformed input file."""


class UnsupportedFormat(IoError):
    """File extension or encoding is not supported."""


class SerializationError(IoError):
    """A value could not be written."""


class SchemaError(IoError):
    """A JSON document does not match the expected schema."""

    def __init__(self, path, key_path: str, message: Optional[str] = None):
        self.path = str(path)
        self.key_path = key_path
        detail = f": {message}" if message else ""
        super().__init__(f"{self.path} [{key_path}]{detail}")
