"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError/ShapeError -> 1,
DataError -> 2, NumericalError -> 3.
"""


class HamnetError(Exception):
    """Base class for every error raised deliberately by this package."""


class ConfigError(HamnetError):
    """Invalid configuration value or inconsistent option combination."""


class ShapeError(HamnetError):
    """Tensor shape mismatch. Shapes never broadcast silently."""


class DataError(HamnetError):
    """Malformed dataset content.

    Carries the offending line number and field when known so CLI users
    can locate the problem in a JSONL file.
    """

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"field '{field}': "
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class NumericalError(HamnetError):
    """Non-finite value produced where a finite one is required."""
