"""Exception hierarchy shared by all viewshift modules."""


class ViewShiftError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(ViewShiftError, ValueError):
    """An argument violates a documented precondition or invariant."""


class ManifestError(ViewShiftError):
    """A scene manifest failed validation."""


class MissingFileError(ManifestError):
    """A file referenced by a manifest does not exist."""


class TimestampOrderError(ManifestError):
    """Frame timestamps are not strictly increasing."""


class MalformedManifestError(ManifestError):
    """The manifest document cannot be parsed or is missing fields."""


class BadPoseError(ManifestError):
    """A pose in the manifest carries a non-unit quaternion."""


class EmptySceneError(ManifestError):
    """The manifest contains no frames."""


class FormatError(ViewShiftError):
    """A binary file (PPM/PGM/checkpoint) is corrupt or truncated."""


class DegenerateViewError(ViewShiftError):
    """A synthetic camera is placed inside or on scene geometry."""


class VerificationError(ViewShiftError):
    """A persisted sample could not be reproduced from its inputs."""


class TrainingDivergedError(ViewShiftError):
    """Toy training produced non-finite parameters."""
