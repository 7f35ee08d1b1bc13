"""Exception hierarchy shared by every TODM package."""


class TODMError(Exception):
    """Base class for all errors raised by the toolkit."""

    category = "error"
    exit_code = 1


class ContractError(TODMError, ValueError):
    """A precondition of an operation was violated."""

    category = "contract"
    exit_code = 3


class DimensionError(ContractError):
    """Two tensors have incompatible shapes."""

    category = "dimension"

    def __init__(self, op: str, *shapes: tuple):
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")
        self.op = op
        self.shapes = shapes


class ConfigError(ContractError):
    """Configuration could not be parsed or validated.

    Args:
        message: Human-readable description
        key: Dotted path of the offending key, when known
    """

    category = "config"
    exit_code = 2

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class NumericError(TODMError, ArithmeticError):
    """NaN or infinite values where finite numbers are required."""

    category = "numeric"
    exit_code = 4


class CheckpointError(TODMError, OSError):
    """A checkpoint, corpus or export file is missing, unreadable or has the wrong format."""

    category = "io"
    exit_code = 5
