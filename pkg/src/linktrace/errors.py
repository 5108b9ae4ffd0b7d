"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI: ConfigurationError -> 1, DataError -> 2,
InvariantError -> 3.
"""


class LinktraceError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LinktraceError):
    """Invalid configuration value or combination."""


class DataError(LinktraceError):
    """Bad input data (files, labels, numeric cells)."""


class ParseError(DataError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class InvariantError(LinktraceError):
    """An internal invariant was violated; indicates a bug."""
