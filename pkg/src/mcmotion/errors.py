"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: validation problems exit 2, I/O
problems exit 3, numeric failures (NaN) exit 4.
"""


class McmError(Exception):
    exit_code = 1


class ValidationError(McmError):
    exit_code = 2


class DimensionError(ValidationError):
    """Array shape or length does not match the declared layout."""


class ConfigError(ValidationError):
    """Bad model or run configuration."""


class UnsupportedError(ValidationError):
    """Requested operation is out of the supported envelope (e.g. upsampling)."""


class EmptyMusicTrackError(ValidationError):
    """Beat alignment requested with no music beats."""


class EmptyDanceTrackError(ValidationError):
    """Beat alignment requested with no dance beats."""


class IoError(McmError):
    exit_code = 3


class NumericError(McmError):
    exit_code = 4
