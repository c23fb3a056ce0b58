"""Exception hierarchy shared by every module.

Each exception carries a machine-readable ``code`` and the process exit
status the command-line front end reports for it.
"""


class PlantViTError(Exception):
    code = "ERROR"
    exit_code = 1


class ConfigError(PlantViTError, ValueError):
    """Invalid shapes, hyperparameters or configuration fields."""

    code = "CONFIG_INVALID"
    exit_code = 4


class NumericError(PlantViTError, ArithmeticError):
    """A NaN/Inf appeared where only finite values are allowed."""

    code = "NUMERIC_ERROR"
    exit_code = 5


class DataError(PlantViTError, ValueError):
    code = "DATA_ERROR"
    exit_code = 2


class DatasetNotFoundError(DataError):
    code = "DATASET_NOT_FOUND"


class MetricError(PlantViTError, ValueError):
    code = "METRIC_ERROR"
    exit_code = 2


class CheckpointError(PlantViTError):
    code = "CHECKPOINT_ERROR"
    exit_code = 3


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or unsupported format version."""

    code = "CHECKPOINT_FORMAT"


class CheckpointCorruptError(CheckpointError):
    """Truncated payload or checksum mismatch."""

    code = "CHECKPOINT_CORRUPT"


class ConfigMismatchError(CheckpointError):
    """Checkpoint architecture differs from the requested configuration."""

    code = "CONFIG_MISMATCH"


class CheckpointNotFoundError(CheckpointError):
    code = "CHECKPOINT_NOT_FOUND"
