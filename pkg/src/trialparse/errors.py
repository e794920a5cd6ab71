"""Exception types shared across the package.

The CLI maps these onto exit codes: bad input data -> 2, everything else
unexpected -> 3. Contract violations inside the library raise plain
ValueError unless a more specific class below applies.
"""


class TrialParseError(Exception):
    """Base class for errors raised by this package."""


class DataFormatError(TrialParseError, ValueError):
    """A data file (JSONL/TSV/CoNLL/checkpoint) is malformed.

    Carries the offending location when known so callers can report
    "file:line" style diagnostics.
    """

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}: " if line is None else f"{path}:{line}: "
        elif line is not None:
            loc = f"line {line}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class ConfigError(TrialParseError, ValueError):
    """A configuration value or parameter combination is invalid."""


class NumericsError(TrialParseError, ArithmeticError):
    """A numeric operation produced or received non-finite values."""
