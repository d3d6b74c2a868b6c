"""Exception types shared across the package.

Validation problems (bad arguments, malformed files) raise subclasses of
``ValueError`` so callers can treat them uniformly; numeric breakdowns
(non-finite losses, failed gradient checks) raise ``NumericError``.  The
command line maps the former to exit code 2 and the latter to exit code 3.
"""


class SceneParseError(ValueError):
    """A scene file line could not be parsed. Carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class SceneFormatError(ValueError):
    """Scenes passed to the writer are inconsistent with each other."""


class BankFormatError(ValueError):
    """Bank file has a bad magic string or a structurally invalid header."""


class BankCorruptionError(ValueError):
    """Bank file payload disagrees with its header or checksum."""


class NumericError(RuntimeError):
    """A numeric invariant broke (non-finite value, failed gradient check)."""
