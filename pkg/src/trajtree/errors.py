"""Exception hierarchy shared across the pipeline.

Exit-code mapping (see cli): ConfigError -> 1, InputError -> 2,
InvariantError -> 3.
"""


class TrajtreeError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(TrajtreeError):
    """Invalid configuration or usage."""


class InputError(TrajtreeError):
    """Malformed or inconsistent input data.

    Carries an optional 1-based line number for corpus diagnostics.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvariantError(TrajtreeError):
    """An internal consistency check failed (oracle mismatch, conservation)."""
