"""Error types with a CLI exit-code contract.

ExportError covers manifest and encoder problems (exit 1); CorpusError
covers bad corpus content and names the offending line (exit 2).
"""


class ExportError(Exception):
    """Manifest, encoder, or output problems."""


class CorpusError(ExportError):
    """A corpus row failed validation."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)
