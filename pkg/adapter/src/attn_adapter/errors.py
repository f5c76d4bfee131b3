"""Failure taxonomy of the export tool, one exit code per family."""


class AdapterError(Exception):
    """Base class; `exit_code` is what the command line returns."""

    exit_code = 1


class UsageError(AdapterError):
    """Bad flags or option values."""

    exit_code = 2


class InputError(AdapterError):
    """Unreadable or ill-formed input files, including fixture violations."""

    exit_code = 3


class ExportError(AdapterError):
    """A captured map violated the shape or stochasticity contract."""

    exit_code = 4


class EnvironmentError_(AdapterError):
    """The requested model is not available on this machine."""

    exit_code = 5
