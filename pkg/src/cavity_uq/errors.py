"""Exception hierarchy shared by all modules.

`InputError` subclasses map to CLI exit code 2, `NumericalError` subclasses
to exit code 3.
"""


class CavityUQError(Exception):
    """Base class for every error raised by this package."""


class InputError(CavityUQError, ValueError):
    pass


class NumericalError(CavityUQError, ArithmeticError):
    pass


class InvalidConfigError(InputError):
    """A model configuration violates its invariants (e.g. non-positive coupling)."""


class MissingSurrogateError(InputError):
    pass


class MalformedRecordError(InputError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class OutOfRangeError(InputError):
    """Value outside the tabulated image of a monotone curve."""


class NoConvergenceError(NumericalError):
    """Iterative eigensolver exceeded its iteration cap."""


class BracketError(NumericalError):
    """Root-finding bracket does not contain a sign change."""


class CalibrationError(NumericalError):
    pass


class DegenerateVarianceError(NumericalError):
    pass


class DegenerateDimensionError(NumericalError):
    """A sample dimension has zero spread, so no KDE bandwidth exists."""
