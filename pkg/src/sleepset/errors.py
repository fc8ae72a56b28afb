"""Exception hierarchy. Every error carries the CLI exit code it maps to:
1 usage/config, 2 data, 3 numerical failure."""


class SleepsetError(Exception):
    exit_code = 1


class UsageError(SleepsetError):
    """Bad command-line invocation (conflicting flags, unknown names)."""
    exit_code = 1


class ConfigError(SleepsetError):
    """Invalid or unknown configuration keys/values."""
    exit_code = 1


class DataError(SleepsetError):
    """Missing or malformed input data."""
    exit_code = 2


class ContainerError(DataError):
    """Base for recording-container format problems."""


class ContainerHeaderError(ContainerError):
    """Header is not parseable or declares an unknown format."""


class ContainerTruncatedError(ContainerError):
    """Payload is shorter than the header declares."""


class ContainerChecksumError(ContainerError):
    """Payload bytes do not match the stored checksum."""


class CheckpointError(DataError):
    """Base for checkpoint file problems."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class CheckpointChecksumError(CheckpointError):
    """Checkpoint payload does not match its stored checksum."""


class NumericalError(SleepsetError):
    """Non-finite values where finite ones are required (NaN loss, inf grads)."""
    exit_code = 3


class ShapeError(ValueError, SleepsetError):
    """Operand shapes violate an operation's contract."""
    exit_code = 1
