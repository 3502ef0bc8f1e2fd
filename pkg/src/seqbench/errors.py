"""Exception types shared across the package, mapped to CLI exit codes."""


class ShapeError(ValueError):
    """Tensor operands have incompatible shapes."""


class ConfigError(ValueError):
    """Bad usage or configuration: unknown keys, invalid values, impossible requests."""

    exit_code = 1


class ParseError(ValueError):
    """A dataset file could not be parsed; message carries the line number."""

    exit_code = 2


class DataError(ValueError):
    """A dataset is structurally unusable (missing files, empty after filtering)."""

    exit_code = 2


class TrainingDivergedError(RuntimeError):
    """Loss became NaN/Inf; message carries epoch and batch index."""

    exit_code = 3
