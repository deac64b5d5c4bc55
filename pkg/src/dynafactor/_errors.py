"""Exception hierarchy shared by all modules."""


class DynaFactorError(Exception):
    """Base class for package errors.

    ``stage`` names the pipeline step that failed, when known.
    """

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage

    def __str__(self):
        msg = super().__str__()
        if self.stage:
            return f"[{self.stage}] {msg}"
        return msg


class ValidationError(DynaFactorError, ValueError):
    """Bad input: malformed data, out-of-range parameter, violated precondition."""


class NumericalError(DynaFactorError, ArithmeticError):
    """A numerical step could not be carried out reliably."""


class RankDeficiencyError(NumericalError):
    """A covariance or design matrix is numerically singular."""
