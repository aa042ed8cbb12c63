"""Exception hierarchy shared by the library and the command line."""


class FreewalkError(Exception):
    """Base class; ``exit_code`` is used by the command line."""

    exit_code = 1


class ModelError(FreewalkError, ValueError):
    """Invalid model, word or configuration."""

    exit_code = 2


class AssumptionError(FreewalkError):
    """A modelling assumption needed by the requested computation does not hold."""

    exit_code = 3


class TransienceError(AssumptionError):
    """The model fails the transience gate (radius of the Green function not above 1)."""


class DegenerateError(AssumptionError):
    """The fluctuation variance vanishes or no short positive cycle exists; the CLT check is refused."""


class NumericError(FreewalkError, ArithmeticError):
    """A fixed-point iteration or linear solve did not meet its tolerance."""

    exit_code = 4
