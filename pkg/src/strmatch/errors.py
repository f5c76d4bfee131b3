"""Exception hierarchy shared across the library and mapped to CLI exit codes."""


class StrMatchError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(StrMatchError):
    """Invalid configuration: bad option values, malformed config files."""

    exit_code = 2


class InputError(StrMatchError):
    """Invalid input data: missing files, bad corpus, non-binary masks."""

    exit_code = 3


class FormatError(InputError):
    """Malformed binary container. Carries the byte offset of the defect."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ShapeError(StrMatchError):
    """Operand shapes violate an operation's contract."""

    exit_code = 3


class DegenerateInputError(StrMatchError):
    """Numerically degenerate input (e.g. cosine of two zero vectors)."""

    exit_code = 4
