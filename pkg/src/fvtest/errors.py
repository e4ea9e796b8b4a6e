"""Exception hierarchy.

Every error carries the name of the module it originated from so the CLI can
prefix messages and choose an exit code (data errors vs numeric failures).
"""


class FvtestError(Exception):
    """Base class for all package errors."""

    origin = "fvtest"


class DataError(FvtestError):
    """Problems with the input data (exit code 2 in the CLI)."""

    origin = "datamodel"


class MissingColumn(DataError):
    pass


class ParseError(DataError):
    pass


class EmptyData(DataError):
    pass


class RoleMismatch(DataError):
    pass


class ValidationError(DataError):
    """One or more invariant violations; ``problems`` lists them all."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class LengthMismatch(DataError):
    origin = "nuisance"


class InvalidSetting(DataError):
    origin = "simlab"


class NumericError(FvtestError):
    """Numerical failures (exit code 3 in the CLI)."""


class SingularSystem(NumericError):
    origin = "nuisance"


class Nonconvergence(NumericError):
    origin = "nuisance"


class PositivityViolation(NumericError):
    origin = "estimands"


class DomainError(NumericError):
    origin = "funclasses"


class DegenerateConditioning(NumericError):
    origin = "funclasses"


class SingularPenalty(NumericError):
    origin = "funclasses"


class InsufficientBootstrap(NumericError):
    origin = "combine"


class EmptyInput(NumericError):
    origin = "combine"


class DegenerateScores(UserWarning):
    """Issued when every influence score is zero."""
