"""Exception hierarchy. Each family maps onto one CLI exit code."""


class MtabsaError(Exception):
    exit_code = 1


class ConfigError(MtabsaError, ValueError):
    exit_code = 2


class DataError(MtabsaError, ValueError):
    exit_code = 3


class DivergenceError(MtabsaError, FloatingPointError):
    exit_code = 4


class ModelMismatchError(MtabsaError):
    """Model artifacts that cannot be used together (vocabulary, config)."""

    exit_code = 5


class CheckpointError(ModelMismatchError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class AlignmentError(MtabsaError):
    exit_code = 6
