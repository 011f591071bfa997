"""Exception hierarchy.

User-facing problems (bad input files, inconsistent records, invalid
arguments) raise :class:`DataError`; failures of the numerics on otherwise
valid input raise :class:`NumericalError`.  The CLI maps the two onto exit
codes 2 and 3.
"""


class IVAHError(Exception):
    """Base class for all package errors."""


class DataError(IVAHError, ValueError):
    """Invalid or inconsistent input data."""


class NumericalError(IVAHError, ArithmeticError):
    """A fit or simulation failed numerically."""


class ConvergenceError(NumericalError):
    """An iterative solver did not converge."""


class SeparationError(NumericalError):
    """The logistic first stage is (quasi-)completely separated."""


class NegativeHazardError(NumericalError):
    """A simulated subject has a negative total hazard."""

    def __init__(self, message, covariates=None):
        super().__init__(message)
        self.covariates = covariates
